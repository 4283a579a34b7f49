#pragma once

#include "csf/scenes.hpp"

#include <filesystem>
#include <stdexcept>
#include <vector>

namespace csf {

/// On-disk dataset: `manifest.txt` plus one `<scene_id>.f32` file per scene.
///
/// The manifest is line oriented:
///
///     csf-dataset 1
///     sensor <name> <bands> <resolution_factor>     (one line per sensor, suite order)
///     size <H> <W>
///     classes <num_classes>
///     scene <scene_id> <class_label> <latent_seed> <file> <h0>x<w0> <h1>x<w1> ...
///
/// Each `.f32` file holds the looks in suite order as little-endian float32,
/// band-major then row-major (band, y, x).
struct Dataset {
  SensorSuite suite;
  SceneSize size;
  int num_classes = 0;
  std::vector<Scene> scenes;
};

class DatasetIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace csf
