#pragma once

// Umbrella header for the whole library: deterministic numerics, the
// reverse-mode tape, knowledge-graph data handling, the highway-gated GCN
// encoder, the training objectives with relational distillation, the two
// training phases, ranking evaluation, and the self-check suite.

#include "rkdea/adam.hpp"
#include "rkdea/checkpoint.hpp"
#include "rkdea/encoder.hpp"
#include "rkdea/errors.hpp"
#include "rkdea/eval.hpp"
#include "rkdea/gradcheck.hpp"
#include "rkdea/kg.hpp"
#include "rkdea/matrix.hpp"
#include "rkdea/objectives.hpp"
#include "rkdea/rng.hpp"
#include "rkdea/sampling.hpp"
#include "rkdea/selfcheck.hpp"
#include "rkdea/tape.hpp"
#include "rkdea/trainer.hpp"

namespace rkdea {

inline constexpr const char* kVersionString = "1.0.0";

}  // namespace rkdea
