#pragma once

// Umbrella header for the FedET simulator library.

#include "fedet/backbone.hpp"
#include "fedet/check.hpp"
#include "fedet/data.hpp"
#include "fedet/distill.hpp"
#include "fedet/enhancer.hpp"
#include "fedet/enhancer_group.hpp"
#include "fedet/federation.hpp"
#include "fedet/gradcheck.hpp"
#include "fedet/harness.hpp"
#include "fedet/memory.hpp"
#include "fedet/rng.hpp"
#include "fedet/tensor.hpp"
#include "fedet/wire.hpp"
