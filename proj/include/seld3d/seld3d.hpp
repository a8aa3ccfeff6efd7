#pragma once

// Umbrella header: the full detection / localization / distance pipeline.

#include "seld3d/codec.hpp"
#include "seld3d/core.hpp"
#include "seld3d/features.hpp"
#include "seld3d/fft.hpp"
#include "seld3d/losses.hpp"
#include "seld3d/metrics.hpp"
#include "seld3d/model.hpp"
#include "seld3d/parallel.hpp"
#include "seld3d/rng.hpp"
#include "seld3d/simulate.hpp"
#include "seld3d/tensor.hpp"
#include "seld3d/wav.hpp"

namespace seld3d {
inline constexpr const char* kVersion = "0.1.0";
}
