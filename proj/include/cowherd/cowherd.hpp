#pragma once

#include "cowherd/bench.hpp"
#include "cowherd/bounds.hpp"
#include "cowherd/condind.hpp"
#include "cowherd/copula.hpp"
#include "cowherd/copulamix.hpp"
#include "cowherd/cowsls.hpp"
#include "cowherd/dists.hpp"
#include "cowherd/error.hpp"
#include "cowherd/generators.hpp"
#include "cowherd/grid.hpp"
#include "cowherd/infer.hpp"
#include "cowherd/io.hpp"
#include "cowherd/model.hpp"
#include "cowherd/nmf.hpp"
#include "cowherd/optim.hpp"
#include "cowherd/optweight.hpp"
#include "cowherd/otsignal.hpp"
#include "cowherd/rng.hpp"
#include "cowherd/smooth.hpp"
#include "cowherd/special.hpp"
#include "cowherd/sweights.hpp"
