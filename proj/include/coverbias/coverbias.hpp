#pragma once

#include "coverbias/bias.hpp"
#include "coverbias/boosting.hpp"
#include "coverbias/error.hpp"
#include "coverbias/explain.hpp"
#include "coverbias/geometry.hpp"
#include "coverbias/homeloc.hpp"
#include "coverbias/ingest.hpp"
#include "coverbias/pipeline.hpp"
#include "coverbias/spatial.hpp"
#include "coverbias/synth.hpp"
