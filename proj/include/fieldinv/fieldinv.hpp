#pragma once

#include "fieldinv/config.hpp"
#include "fieldinv/core.hpp"
#include "fieldinv/experiment.hpp"
#include "fieldinv/fem.hpp"
#include "fieldinv/graph.hpp"
#include "fieldinv/la.hpp"
#include "fieldinv/mesh.hpp"
#include "fieldinv/nn.hpp"
#include "fieldinv/optim.hpp"
#include "fieldinv/pcl.hpp"
#include "fieldinv/problems.hpp"
