#pragma once

#include "soldfl/acceptance.hpp"
#include "soldfl/adapter.hpp"
#include "soldfl/checkpoint.hpp"
#include "soldfl/collision.hpp"
#include "soldfl/config.hpp"
#include "soldfl/error.hpp"
#include "soldfl/linalg.hpp"
#include "soldfl/metrics_io.hpp"
#include "soldfl/model.hpp"
#include "soldfl/rng.hpp"
#include "soldfl/sim.hpp"
#include "soldfl/sparsity_alloc.hpp"
#include "soldfl/topology.hpp"
#include "soldfl/wireless.hpp"
