#pragma once
// Umbrella header for the positional-encoding laboratory.

#include "bam/attention.hpp"    // IWYU pragma: export
#include "bam/checkpoint_io.hpp"  // IWYU pragma: export
#include "bam/model.hpp"        // IWYU pragma: export
#include "bam/numerics.hpp"     // IWYU pragma: export
#include "bam/priors.hpp"       // IWYU pragma: export
#include "bam/rng.hpp"          // IWYU pragma: export
#include "bam/tasks.hpp"        // IWYU pragma: export
#include "bam/theory.hpp"       // IWYU pragma: export
#include "bam/train.hpp"        // IWYU pragma: export

namespace bam {
inline constexpr const char* kVersion = "0.1.0";
}
