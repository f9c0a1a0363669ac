#pragma once

#include "pathmamba/error.hpp"
#include "pathmamba/rng.hpp"
#include "pathmamba/tensor.hpp"
#include "pathmamba/ops.hpp"
#include "pathmamba/gradcheck.hpp"
#include "pathmamba/layers.hpp"
#include "pathmamba/checkpoint.hpp"
#include "pathmamba/ssm.hpp"
#include "pathmamba/scan2d.hpp"
#include "pathmamba/backbone.hpp"
#include "pathmamba/mask.hpp"
#include "pathmamba/supervision.hpp"
#include "pathmamba/topology.hpp"
#include "pathmamba/image_io.hpp"
#include "pathmamba/synthgen.hpp"
#include "pathmamba/training.hpp"
#include "pathmamba/gradcheck_suite.hpp"
