#pragma once

#include "ortho_cate/base_learners.hpp"
#include "ortho_cate/bench.hpp"
#include "ortho_cate/core.hpp"
#include "ortho_cate/dgp.hpp"
#include "ortho_cate/diagnostics.hpp"
#include "ortho_cate/errors.hpp"
#include "ortho_cate/meta_learners.hpp"
#include "ortho_cate/metrics.hpp"
#include "ortho_cate/pseudo.hpp"
#include "ortho_cate/weights.hpp"
