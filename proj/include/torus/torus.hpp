// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "torus/collectives.hpp"
#include "torus/costmodel.hpp"
#include "torus/dtype.hpp"
#include "torus/error.hpp"
#include "torus/harness.hpp"
#include "torus/inproc_fabric.hpp"
#include "torus/instrument.hpp"
#include "torus/largebatch.hpp"
#include "torus/schedule.hpp"
#include "torus/tcp_transport.hpp"
#include "torus/tensor.hpp"
#include "torus/topology.hpp"
#include "torus/trainsim.hpp"
#include "torus/transport.hpp"
#include "torus/wire.hpp"
