#include "csf/dataset_io.hpp"

#include <bit>
#include <fstream>
#include <sstream>

namespace csf {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "dataset files are little-endian float32");

void save_dataset(const Dataset& dataset, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DatasetIoError("cannot create dataset directory " + dir.string() + ": " + ec.message());

  std::ostringstream manifest;
  manifest << "csf-dataset 1\n";
  for (const auto& s : dataset.suite.sensors())
    manifest << "sensor " << s.name << ' ' << s.bands << ' ' << s.resolution_factor << '\n';
  manifest << "size " << dataset.size.height << ' ' << dataset.size.width << '\n';
  manifest << "classes " << dataset.num_classes << '\n';

  for (const auto& scene : dataset.scenes) {
    const std::string file = scene.scene_id + ".f32";
    std::ofstream out(dir / file, std::ios::binary | std::ios::trunc);
    if (!out) throw DatasetIoError("cannot write " + (dir / file).string());
    manifest << "scene " << scene.scene_id << ' ' << scene.class_label << ' ' << scene.latent_seed << ' ' << file;
    for (std::size_t i = 0; i < scene.looks.size(); ++i) {
      const auto [h, w] = scene.look_shapes[i];
      manifest << ' ' << h << 'x' << w;
      // Band-major rows are the transpose of the pixel-major Eigen storage.
      const Matrix<float> rows = scene.looks[i].transpose();
      out.write(reinterpret_cast<const char*>(rows.data()), std::streamsize(rows.size() * sizeof(float)));
    }
    manifest << '\n';
    if (!out) throw DatasetIoError("short write on " + (dir / file).string());
  }

  std::ofstream m(dir / "manifest.txt", std::ios::trunc);
  m << manifest.str();
  if (!m) throw DatasetIoError("cannot write manifest in " + dir.string());
}

Dataset load_dataset(const fs::path& dir) {
  std::ifstream m(dir / "manifest.txt");
  if (!m) throw DatasetIoError("no manifest.txt in " + dir.string());

  Dataset ds;
  std::vector<SensorSpec> sensors;
  std::string line;
  int lineno = 0;
  bool header = false;
  auto fail = [&](const std::string& why) {
    throw DatasetIoError((dir / "manifest.txt").string() + ":" + std::to_string(lineno) + ": " + why);
  };

  while (std::getline(m, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream in(line);
    std::string kind;
    in >> kind;
    if (kind == "csf-dataset") {
      int version = 0;
      in >> version;
      if (version != 1) fail("unsupported dataset version");
      header = true;
    } else if (!header) {
      fail("missing csf-dataset header");
    } else if (kind == "sensor") {
      SensorSpec s;
      if (!(in >> s.name >> s.bands >> s.resolution_factor)) fail("malformed sensor line");
      sensors.push_back(s);
    } else if (kind == "size") {
      if (!(in >> ds.size.height >> ds.size.width)) fail("malformed size line");
    } else if (kind == "classes") {
      if (!(in >> ds.num_classes)) fail("malformed classes line");
    } else if (kind == "scene") {
      if (ds.suite.size() == 0) ds.suite = SensorSuite(sensors);
      Scene scene;
      std::string file;
      if (!(in >> scene.scene_id >> scene.class_label >> scene.latent_seed >> file)) fail("malformed scene line");
      std::ifstream data(dir / file, std::ios::binary);
      if (!data) fail("missing scene file " + file);
      for (const auto& sensor : ds.suite.sensors()) {
        std::string shape;
        int h = 0, w = 0;
        char x = 0;
        if (!(in >> shape)) fail("scene " + scene.scene_id + " lists too few looks");
        std::istringstream sh(shape);
        if (!(sh >> h >> x >> w) || x != 'x' || h <= 0 || w <= 0) fail("malformed look shape '" + shape + "'");
        Matrix<float> rows(Eigen::Index(h) * w, sensor.bands);
        data.read(reinterpret_cast<char*>(rows.data()), std::streamsize(rows.size() * sizeof(float)));
        if (!data) fail("truncated scene file " + file);
        scene.looks.push_back(rows.transpose());
        scene.look_shapes.emplace_back(h, w);
      }
      if (data.peek() != std::char_traits<char>::eof()) fail("trailing bytes in scene file " + file);
      ds.scenes.push_back(std::move(scene));
    } else {
      fail("unknown record '" + kind + "'");
    }
  }
  if (!header) throw DatasetIoError("empty manifest in " + dir.string());
  if (ds.suite.size() == 0) ds.suite = SensorSuite(sensors);
  return ds;
}

}  // namespace csf
