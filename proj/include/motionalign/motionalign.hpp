#pragma once

#include "motionalign/core.hpp"
#include "motionalign/descriptors.hpp"
#include "motionalign/homography.hpp"
#include "motionalign/tps.hpp"
#include "motionalign/ttps.hpp"
#include "motionalign/evaluation.hpp"
#include "motionalign/pipeline.hpp"
#include "motionalign/io.hpp"
#include "motionalign/config.hpp"
#include "motionalign/report.hpp"
#include "motionalign/synthetic.hpp"
