#pragma once

// Umbrella header.

#include "editlab/checkpoint.hpp"
#include "editlab/data.hpp"
#include "editlab/editors.hpp"
#include "editlab/harness.hpp"
#include "editlab/io.hpp"
#include "editlab/linalg.hpp"
#include "editlab/metrics.hpp"
#include "editlab/network.hpp"
#include "editlab/rng.hpp"
#include "editlab/sgd.hpp"
#include "editlab/shiftlab.hpp"
#include "editlab/tensor.hpp"
