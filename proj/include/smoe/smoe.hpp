#pragma once

#include "smoe/numkernel/finite_diff.hpp"
#include "smoe/numkernel/ops.hpp"
#include "smoe/numkernel/params.hpp"
#include "smoe/numkernel/tape.hpp"
#include "smoe/numkernel/tensor.hpp"

#include "smoe/experts.hpp"
#include "smoe/fusion.hpp"
#include "smoe/io.hpp"
#include "smoe/losses.hpp"
#include "smoe/metrics.hpp"
#include "smoe/model.hpp"
#include "smoe/synthdata.hpp"
#include "smoe/trainer.hpp"
#include "smoe/vocab.hpp"

namespace smoe {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace smoe
