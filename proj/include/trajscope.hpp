#pragma once

#include "trajscope/annotation_server.hpp"
#include "trajscope/cnn.hpp"
#include "trajscope/config.hpp"
#include "trajscope/detect.hpp"
#include "trajscope/errors.hpp"
#include "trajscope/files.hpp"
#include "trajscope/io.hpp"
#include "trajscope/labels.hpp"
#include "trajscope/mdpmm.hpp"
#include "trajscope/pipeline.hpp"
#include "trajscope/png.hpp"
#include "trajscope/raster.hpp"
#include "trajscope/rng.hpp"
#include "trajscope/synth.hpp"
#include "trajscope/trajectory.hpp"
#include "trajscope/tsne.hpp"
#include "trajscope/vae.hpp"
