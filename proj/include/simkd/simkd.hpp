#pragma once

#include "simkd/binary_io.hpp"
#include "simkd/checkpoint.hpp"
#include "simkd/config.hpp"
#include "simkd/dataset.hpp"
#include "simkd/distiller.hpp"
#include "simkd/error.hpp"
#include "simkd/gradcheck.hpp"
#include "simkd/layers.hpp"
#include "simkd/losses.hpp"
#include "simkd/metrics.hpp"
#include "simkd/network.hpp"
#include "simkd/ops.hpp"
#include "simkd/optim.hpp"
#include "simkd/projector.hpp"
#include "simkd/rng.hpp"
#include "simkd/runner.hpp"
#include "simkd/tensor.hpp"
#include "simkd/zoo.hpp"
