#pragma once

// Umbrella header for the collapse-lab library.

#include "clab/binio.hpp"
#include "clab/classifier.hpp"
#include "clab/config.hpp"
#include "clab/dataset.hpp"
#include "clab/diffusion.hpp"
#include "clab/errors.hpp"
#include "clab/loop.hpp"
#include "clab/matrix.hpp"
#include "clab/metrics.hpp"
#include "clab/nn.hpp"
#include "clab/parallel.hpp"
#include "clab/prng.hpp"
#include "clab/snapshot.hpp"
#include "clab/svg.hpp"
