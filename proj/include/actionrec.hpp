#pragma once

#include "actionrec/descriptors.hpp"
#include "actionrec/detector.hpp"
#include "actionrec/errors.hpp"
#include "actionrec/harness.hpp"
#include "actionrec/imaging.hpp"
#include "actionrec/io.hpp"
#include "actionrec/rng.hpp"
#include "actionrec/segmentation.hpp"
#include "actionrec/structmodel.hpp"
