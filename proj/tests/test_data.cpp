#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include <widen/widen.hpp>

using namespace widen;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / ("widen_data_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& b) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

// Two 2x3 images and their labels, written out byte by byte.
const std::vector<unsigned char> fixture_images{
    0x00, 0x00, 0x08, 0x03, // magic
    0x00, 0x00, 0x00, 0x02, // count
    0x00, 0x00, 0x00, 0x02, // rows
    0x00, 0x00, 0x00, 0x03, // cols
    0, 51, 102, 153, 204, 255,
    255, 0, 255, 0, 255, 0,
};
const std::vector<unsigned char> fixture_labels{0x00, 0x00, 0x08, 0x01, 0x00, 0x00, 0x00, 0x02, 7, 3};

Dataset<double> four_pixels() {
    Dataset<double> d;
    d.images = Tensor<double>({2, 1, 1, 2}, {1.0, 2.0, 3.0, 6.0});
    d.labels = {0, 1};
    d.num_classes = 2;
    return d;
}

double accuracy_after(const std::string& arch_file, const SyntheticTaskSpec& spec, std::size_t epochs, std::uint64_t seed,
                      std::size_t width = 0) {
    harness::DataConfig dc;
    dc.synthetic = spec;
    const auto data = harness::load_data<double>(dc);
    auto arch = load_arch(std::string(WIDEN_SOURCE_DIR "/configs/") + arch_file);
    if (width) arch = with_uniform_width(arch, width);
    TrainConfig cfg;
    cfg.batch_size = 32;
    cfg.epochs = epochs;
    cfg.schedule.clear();
    Rng rng(seed);
    const auto r = train(arch, cfg, data.train, rng);
    return evaluate(arch, r.store, data.test).accuracy;
}

} // namespace

TEST(Idx, FixturePixelsRecovered) {
    const auto dir = scratch_dir("fixture");
    write_bytes(dir / "img", fixture_images);
    write_bytes(dir / "lab", fixture_labels);
    const auto ds = load_mnist_idx<double>((dir / "img").string(), (dir / "lab").string());
    EXPECT_EQ(ds.images.shape(), (Shape{2, 1, 2, 3}));
    EXPECT_EQ(ds.labels, (std::vector<int>{7, 3}));
    const double want[12] = {0, 0.2, 0.4, 0.6, 0.8, 1, 1, 0, 1, 0, 1, 0};
    for (std::size_t k = 0; k < 12; ++k) EXPECT_NEAR(ds.images[k], want[k], 1e-15);
}

TEST(Idx, CifarLayoutPadsAndReplicates) {
    const auto dir = scratch_dir("cifar");
    write_bytes(dir / "img", fixture_images);
    write_bytes(dir / "lab", fixture_labels);
    const auto ds = load_mnist_idx<double>((dir / "img").string(), (dir / "lab").string(), {true, 10});
    EXPECT_EQ(ds.images.shape(), (Shape{2, 3, 6, 7}));
    for (std::size_t c = 0; c < 3; ++c) {
        EXPECT_EQ(ds.images.at(0, c, 0, 0), 0.0);
        EXPECT_NEAR(ds.images.at(0, c, 2, 3), 0.2, 1e-15);
        EXPECT_NEAR(ds.images.at(1, c, 3, 3), 1.0, 1e-15);
    }
}

TEST(Idx, EncodeRoundTripIsByteExact) {
    const auto img = parse_idx_images(fixture_images);
    EXPECT_EQ(encode_idx_images(img), fixture_images);
    EXPECT_EQ(encode_idx_labels(parse_idx_labels(fixture_labels)), fixture_labels);
}

TEST(Idx, MalformedFilesAreParseErrors) {
    auto bad = fixture_images;
    bad[3] = 0x01;
    EXPECT_THROW(parse_idx_images(bad), ParseError);
    EXPECT_THROW(parse_idx_labels(fixture_images), ParseError);
    EXPECT_THROW(parse_idx_images({}), ParseError);
    EXPECT_THROW(parse_idx_labels({}), ParseError);
    auto cut = fixture_images;
    cut.pop_back();
    try {
        parse_idx_images(cut, "cut");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos) << e.what();
    }
    auto short_labels = fixture_labels;
    short_labels.pop_back();
    EXPECT_THROW(parse_idx_labels(short_labels), ParseError);
}

TEST(Idx, EmptyFileAndCountMismatch) {
    const auto dir = scratch_dir("broken");
    write_bytes(dir / "empty", {});
    write_bytes(dir / "img", fixture_images);
    auto one = fixture_labels;
    one[7] = 1;
    one.pop_back();
    write_bytes(dir / "lab1", one);
    EXPECT_THROW(load_mnist_idx<double>((dir / "empty").string(), (dir / "lab1").string()), ParseError);
    EXPECT_THROW(load_mnist_idx<double>((dir / "img").string(), (dir / "lab1").string()), ParseError);
    EXPECT_THROW(load_mnist_idx<double>((dir / "missing").string(), (dir / "lab1").string()), ParseError);
}

TEST(Normalize, FourPixelsByHand) {
    auto d = four_pixels(); // mean 3, population std sqrt(3.5)
    const auto n = normalize(d, d);
    const double s = std::sqrt(3.5);
    EXPECT_NEAR(n.images[0], -2.0 / s, 1e-15);
    EXPECT_NEAR(n.images[1], -1.0 / s, 1e-15);
    EXPECT_NEAR(n.images[2], 0.0, 1e-15);
    EXPECT_NEAR(n.images[3], 3.0 / s, 1e-15);
    EXPECT_EQ(n.mean, (std::vector<double>{3.0}));
}

TEST(Normalize, TestSplitUsesTrainStatistics) {
    auto train = four_pixels();
    auto test = four_pixels();
    test.split = "test";
    for (auto& v : test.images.values()) v += 10.0;
    const auto n = normalize(test, train);
    EXPECT_EQ(n.mean, (std::vector<double>{3.0}));
    EXPECT_NEAR(n.images[2], 10.0 / std::sqrt(3.5), 1e-14);
    EXPECT_THROW(normalize(train, test), ConfigError);
}

TEST(Normalize, NoisyChannelBecomesStandard) {
    Rng rng(1);
    Dataset<double> d;
    d.images = Tensor<double>::normal({200, 2, 4, 4}, rng, 0.0, 0.1);
    for (std::size_t i = 0; i < d.images.size(); ++i) d.images[i] += (i / 16) % 2 ? 5.0 : -3.0;
    d.labels.assign(200, 0);
    d.num_classes = 1;
    const auto s = channel_stats(normalize(d, d));
    for (std::size_t c = 0; c < 2; ++c) {
        EXPECT_NEAR(s.mean[c], 0.0, 1e-12);
        EXPECT_NEAR(s.stddev[c], 1.0, 1e-12);
    }
}

TEST(Normalize, ZeroVarianceChannelThrows) {
    Dataset<double> d;
    d.images = Tensor<double>({3, 1, 2, 2}, 0.5);
    d.labels = {0, 0, 0};
    d.num_classes = 1;
    EXPECT_THROW(normalize(d, d), NumericError);
}

TEST(Normalize, RoundTrip) {
    Rng rng(2);
    Dataset<double> d;
    d.images = Tensor<double>::normal({10, 3, 5, 5}, rng, 2.0, 3.0);
    d.labels.assign(10, 0);
    d.num_classes = 1;
    const auto back = denormalize(normalize(d, d));
    for (std::size_t k = 0; k < d.images.size(); ++k) EXPECT_NEAR(back.images[k], d.images[k], 1e-12);
    EXPECT_TRUE(back.mean.empty());
}

TEST(Augment, DisabledIsIdentity) {
    Rng rng(3);
    auto x = Tensor<double>::normal({4, 2, 5, 5}, rng);
    const auto before = rng;
    EXPECT_EQ(augment(x, false, 0, rng), x);
}

TEST(Augment, DoubleFlipRestoresImage) {
    Rng rng(4);
    auto x = Tensor<double>::normal({1, 3, 4, 5}, rng);
    auto y = x;
    flip_horizontal(y.slice(0), 3, 4, 5);
    EXPECT_NE(y, x);
    EXPECT_EQ(y.at(0, 1, 2, 0), x.at(0, 1, 2, 4));
    flip_horizontal(y.slice(0), 3, 4, 5);
    EXPECT_EQ(y, x);
}

TEST(Augment, TranslateFixture) {
    // 1 channel, 3x4, shifted down by two rows
    Tensor<double> x({1, 1, 3, 4}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
    translate_image(x.slice(0), 1, 3, 4, 2, 0);
    EXPECT_EQ(x.values(), (std::vector<double>{0, 0, 0, 0, 0, 0, 0, 0, 1, 2, 3, 4}));
    Tensor<double> y({1, 1, 2, 3}, {1, 2, 3, 4, 5, 6});
    translate_image(y.slice(0), 1, 2, 3, 0, -1);
    EXPECT_EQ(y.values(), (std::vector<double>{2, 3, 0, 5, 6, 0}));
}

TEST(Augment, PreservesShapeAndMass) {
    Rng rng(5);
    auto x = Tensor<double>::normal({16, 3, 8, 8}, rng);
    const auto y = augment(x, true, 4, rng);
    EXPECT_EQ(y.shape(), x.shape());
    EXPECT_NE(y, x);
}

TEST(Synthetic, SameSeedSameTensors) {
    SyntheticTaskSpec s;
    s.num_classes = 4;
    s.clusters = 2;
    s.jitter = 1;
    const auto a = gen_synthetic<double>(s), b = gen_synthetic<double>(s);
    EXPECT_EQ(a.train.images, b.train.images);
    EXPECT_EQ(a.test.images, b.test.images);
    EXPECT_EQ(a.train.labels, b.train.labels);
    s.seed = 2;
    EXPECT_NE(gen_synthetic<double>(s).train.images, a.train.images);
}

TEST(Synthetic, ShapesLabelsAndValidation) {
    SyntheticTaskSpec s;
    s.num_classes = 3;
    s.channels = 2;
    s.image_size = 6;
    s.train_size = 9;
    s.test_size = 4;
    const auto d = gen_synthetic<double>(s);
    EXPECT_EQ(d.train.images.shape(), (Shape{9, 2, 6, 6}));
    EXPECT_EQ(d.test.split, "test");
    EXPECT_NO_THROW(d.train.validate());
    s.num_classes = 1;
    EXPECT_THROW(gen_synthetic<double>(s), ConfigError);
    EXPECT_THROW(synthetic_spec_from_json({{"noise", -1.0}}), ConfigError);
}

TEST(Synthetic, EasyTaskIsSolvedByWidthOneNet) {
    SyntheticTaskSpec s; // 2 classes, one cluster each, light clutter
    s.seed = 100;
    EXPECT_GT(accuracy_after("toy.json", s, 5, 1), 0.95);
}

TEST(Synthetic, HardTaskStarvesWidthOneNet) {
    SyntheticTaskSpec s;
    s.num_classes = 10;
    s.clusters = 3;
    s.noise = 1.0;
    s.jitter = 1;
    s.seed = 100;
    const double narrow = accuracy_after("toy-10.json", s, 6, 1);
    EXPECT_LT(narrow, 0.6);
    // the task itself is learnable given enough features
    EXPECT_GT(accuracy_after("toy-10.json", s, 6, 1, 16), narrow + 0.15);
}
