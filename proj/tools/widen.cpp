#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include <widen/harness.hpp>

namespace fs = std::filesystem;
using namespace widen;
using namespace widen::harness;

namespace {

std::vector<std::uint64_t> parse_seeds(const std::string& list) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t pos = 0;
            out.push_back(std::stoull(item, &pos));
            if (pos != item.size()) throw std::invalid_argument(item);
        } catch (const std::logic_error&) {
            throw ConfigError("--seeds: '" + item + "' is not a seed");
        }
    }
    if (out.empty()) throw ConfigError("--seeds: empty list");
    return out;
}

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string seeds;
    std::string out = "runs/out";
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--config", c.config, "run configuration (JSON)")->required();
    sub->add_option("--seed", c.seed, "override the configured seed");
    sub->add_option("--seeds", c.seeds, "comma-separated seeds, run one after another");
    sub->add_option("--out", c.out, "output directory");
}

void print_record(const RunRecord& r) {
    std::cout << r.mode << " seed " << r.seed << ": widths [";
    for (std::size_t i = 0; i < r.final_widths.size(); ++i) std::cout << (i ? "," : "") << r.final_widths[i];
    char buf[96];
    std::snprintf(buf, sizeof buf, "] params %zu accuracy %.4f (%.1fs)\n", r.final_params, r.final_eval.accuracy,
                  r.wall_time_s);
    std::cout << buf;
}

template <typename Fn>
void run_seeds(const Common& c, RunConfig cfg, Fn&& fn) {
    if (!c.seeds.empty()) {
        std::vector<RunRecord> recs;
        for (auto s : parse_seeds(c.seeds)) {
            cfg.seed = s;
            cfg.raw["seed"] = s;
            recs.push_back(fn(cfg, fs::path(c.out) / ("seed-" + std::to_string(s))));
            print_record(recs.back());
        }
        const auto rep = report(recs);
        write_text(fs::path(c.out) / "report.json", dump(rep));
        std::cout << report_text(rep);
        return;
    }
    if (c.seed) {
        cfg.seed = *c.seed;
        cfg.raw["seed"] = *c.seed;
    }
    print_record(fn(cfg, fs::path(c.out)));
}

std::vector<RunRecord> collect_records(const std::vector<std::string>& inputs) {
    std::vector<RunRecord> recs;
    for (const auto& in : inputs) {
        fs::path p(in);
        if (fs::is_directory(p)) {
            std::vector<fs::path> found;
            for (const auto& e : fs::recursive_directory_iterator(p))
                if (e.path().filename() == "record.json") found.push_back(e.path());
            std::sort(found.begin(), found.end());
            for (const auto& f : found) recs.push_back(record_from_json(nlohmann::json::parse(read_text(f.string()))));
        } else {
            try {
                recs.push_back(record_from_json(nlohmann::json::parse(read_text(in))));
            } catch (const nlohmann::json::parse_error& e) {
                throw ParseError(in + ": " + e.what());
            }
        }
    }
    return recs;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Width expansion and feature pruning experiments"};
    app.require_subcommand(1);

    Common train_c, expand_c, prune_c;
    auto* train = app.add_subcommand("train", "train a fixed architecture");
    add_common(train, train_c);

    auto* expand = app.add_subcommand("expand", "grow layer widths from a single feature");
    add_common(expand, expand_c);
    std::string condition;
    std::size_t eval_every = 0;
    expand->add_option("--condition", condition, "expansion inequality: prose or printed");
    expand->add_option("--eval-every", eval_every, "optimizer steps between expansion checks");

    auto* prune = app.add_subcommand("prune", "pruning curves of a trained checkpoint");
    add_common(prune, prune_c);
    std::string metric, checkpoint;
    prune->add_option("--metric", metric, "only this metric (self_resemblance, l1_norm, mean_activation)");
    prune->add_option("--checkpoint", checkpoint, "checkpoint directory (overrides prune.checkpoint)");

    auto* plot = app.add_subcommand("plot", "render SVG panels from event logs and prune curves");
    std::vector<std::string> plot_inputs;
    std::string plot_out = "plots";
    plot->add_option("inputs", plot_inputs, "events.jsonl and prune_*.csv files")->required();
    plot->add_option("--out", plot_out, "output directory");

    auto* rep = app.add_subcommand("report", "aggregate run records");
    std::vector<std::string> rep_inputs;
    std::string rep_out;
    rep->add_option("inputs", rep_inputs, "record.json files or directories containing them")->required();
    rep->add_option("--out", rep_out, "write the aggregate as JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*train) {
            run_seeds(train_c, load_config(train_c.config),
                      [](const RunConfig& c, const fs::path& out) { return cmd_train<double>(c, out); });
        } else if (*expand) {
            auto cfg = load_config(expand_c.config);
            if (!condition.empty()) {
                cfg.expansion.condition = condition_from_string(condition);
                cfg.raw["expansion"]["condition"] = condition;
            }
            if (eval_every) {
                cfg.expansion.eval_every = eval_every;
                cfg.raw["expansion"]["eval_every"] = eval_every;
            }
            cfg.expansion.validate();
            run_seeds(expand_c, cfg, [](const RunConfig& c, const fs::path& out) { return cmd_expand<double>(c, out); });
        } else if (*prune) {
            auto cfg = load_config(prune_c.config);
            if (!metric.empty()) {
                cfg.prune.metrics = {metric_from_string(metric)};
                cfg.raw["prune"]["metrics"] = {metric};
            }
            if (!checkpoint.empty()) {
                cfg.prune.checkpoint = checkpoint;
                cfg.raw["prune"]["checkpoint"] = checkpoint;
            }
            run_seeds(prune_c, cfg, [](const RunConfig& c, const fs::path& out) {
                auto r = cmd_prune<double>(c, out);
                for (const auto& [m, s] : r.extra.at("curves").items()) {
                    std::cout << m << ": prunable " << s.at("prunable").get<std::size_t>() << " of "
                              << s.at("total_features").get<std::size_t>() << " features\n";
                }
                return r;
            });
        } else if (*plot) {
            for (const auto& f : cmd_plot(plot_inputs, plot_out)) std::cout << f.string() << "\n";
        } else if (*rep) {
            const auto r = report(collect_records(rep_inputs));
            if (!rep_out.empty()) write_text(rep_out, dump(r));
            std::cout << report_text(r);
        }
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ParseError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 2;
    } catch (const ShapeError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
