#pragma once

#include "arch.hpp"
#include "data.hpp"
#include "error.hpp"
#include "expansion.hpp"
#include "harness.hpp"
#include "importance.hpp"
#include "network.hpp"
#include "ops.hpp"
#include "optim.hpp"
#include "params.hpp"
#include "pruning.hpp"
#include "rng.hpp"
#include "svg.hpp"
#include "tensor.hpp"
#include "trainer.hpp"
