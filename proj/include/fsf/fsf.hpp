#pragma once

#include "fsf/attack.hpp"
#include "fsf/error.hpp"
#include "fsf/fourier_shape.hpp"
#include "fsf/grid.hpp"
#include "fsf/io.hpp"
#include "fsf/objectives.hpp"
#include "fsf/parallel.hpp"
#include "fsf/patch_pipeline.hpp"
#include "fsf/toy_scene.hpp"
#include "fsf/winding_raster.hpp"
