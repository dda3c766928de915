#include "wsovod/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "wsovod/rng.hpp"

namespace wsovod {

Vocabulary default_vocabulary() {
  Vocabulary v;
  const std::array<std::array<double, 3>, 8> colors = {{
      {0.9, 0.1, 0.1},
      {0.1, 0.8, 0.1},
      {0.1, 0.2, 0.9},
      {0.9, 0.9, 0.1},
      {0.9, 0.1, 0.9},
      {0.1, 0.9, 0.9},
      {0.9, 0.5, 0.1},
      {0.5, 0.1, 0.9},
  }};
  const std::array<std::string, 8> names = {"red",  "green",   "blue", "yellow",
                                            "pink", "cyan", "orange", "violet"};
  for (std::size_t i = 0; i < 8; ++i) {
    CategorySpec c;
    c.name = names[i];
    c.appearance = colors[i];
    c.texture = int(i % 4);
    v.push_back(c);
  }
  auto add_novel = [&](const std::string& name,
                       std::vector<std::pair<std::size_t, double>> mix) {
    CategorySpec c;
    c.name = name;
    c.is_novel = true;
    c.mixture = std::move(mix);
    c.appearance = {0, 0, 0};
    for (const auto& [b, w] : c.mixture)
      for (int k = 0; k < 3; ++k) c.appearance[k] += w * v[b].appearance[k];
    c.texture = v[c.mixture.front().first].texture;
    v.push_back(c);
  };
  add_novel("coral", {{0, 0.5}, {6, 0.5}});     // red + orange
  add_novel("indigo", {{2, 0.5}, {7, 0.5}});    // blue + violet
  return v;
}

std::vector<std::size_t> base_category_ids(const Vocabulary& vocab) {
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < vocab.size(); ++i)
    if (!vocab[i].is_novel) ids.push_back(i);
  return ids;
}

std::vector<std::size_t> novel_category_ids(const Vocabulary& vocab) {
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < vocab.size(); ++i)
    if (vocab[i].is_novel) ids.push_back(i);
  return ids;
}

std::string vocabulary_to_json(const Vocabulary& vocab) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& c : vocab) {
    nlohmann::json j = {{"name", c.name},
                        {"color", c.appearance},
                        {"texture", c.texture},
                        {"novel", c.is_novel}};
    if (!c.mixture.empty()) {
      nlohmann::json mix = nlohmann::json::array();
      for (const auto& [b, w] : c.mixture) mix.push_back({{"base", b}, {"w", w}});
      j["mixture"] = mix;
    }
    arr.push_back(j);
  }
  return arr.dump();
}

void save_vocabulary(const Vocabulary& vocab, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write vocabulary: " + path);
  out << nlohmann::json::parse(vocabulary_to_json(vocab)).dump(2) << "\n";
}

Vocabulary vocabulary_from_json(const std::string& text) {
  const nlohmann::json arr = nlohmann::json::parse(text);
  Vocabulary v;
  for (const auto& j : arr) {
    CategorySpec c;
    c.name = j.at("name").get<std::string>();
    c.appearance = j.at("color").get<std::array<double, 3>>();
    c.texture = j.value("texture", 0);
    c.is_novel = j.value("novel", false);
    if (j.contains("mixture"))
      for (const auto& m : j["mixture"])
        c.mixture.emplace_back(m.at("base").get<std::size_t>(),
                               m.at("w").get<double>());
    v.push_back(c);
  }
  std::set<std::string> names;
  for (const auto& c : v)
    if (!names.insert(c.name).second)
      throw std::runtime_error("duplicate category name: " + c.name);
  return v;
}

Vocabulary load_vocabulary(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read vocabulary: " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return vocabulary_from_json(text);
}

BiasProfile object_centric_profile() {
  BiasProfile p;
  p.name = "object_centric";
  p.min_objects = 1;
  p.max_objects = 1;
  p.min_scale = 0.4;
  p.max_scale = 0.7;
  p.placement = BiasProfile::Placement::kCentered;
  p.brightness = 0.15;
  p.clutter_density = 0.0;
  return p;
}

BiasProfile scene_centric_profile() {
  BiasProfile p;
  p.name = "scene_centric";
  p.min_objects = 2;
  p.max_objects = 6;
  p.min_scale = 0.15;
  p.max_scale = 0.35;
  p.placement = BiasProfile::Placement::kUniform;
  p.brightness = 0.45;
  p.clutter_density = 3.0;
  return p;
}

BiasProfile profile_by_name(const std::string& name) {
  if (name == "object_centric") return object_centric_profile();
  if (name == "scene_centric") return scene_centric_profile();
  throw std::runtime_error("unknown bias profile: " + name);
}

Scene gen_scene(const BiasProfile& profile, const Vocabulary& vocab,
                const std::vector<std::size_t>& allowed_categories,
                std::uint64_t seed, std::size_t image_size) {
  if (allowed_categories.empty())
    throw std::runtime_error("gen_scene: empty category set");
  Rng rng(hash_combine(seed, std::string("scene")));
  Scene scene;
  scene.h = scene.w = image_size;
  scene.brightness = profile.brightness;
  scene.clutter_density = profile.clutter_density;
  scene.seed = seed;
  const int span = profile.max_objects - profile.min_objects + 1;
  const int count = profile.min_objects + int(rng.uniform_int(std::uint64_t(span)));
  const double side = double(image_size);
  for (int n = 0; n < count; ++n) {
    const std::size_t cat =
        allowed_categories[rng.uniform_int(allowed_categories.size())];
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      const double bw = rng.uniform(profile.min_scale, profile.max_scale) * side;
      const double bh = rng.uniform(profile.min_scale, profile.max_scale) * side;
      double cx, cy;
      if (profile.placement == BiasProfile::Placement::kCentered) {
        cx = side * (0.5 + rng.uniform(-0.1, 0.1));
        cy = side * (0.5 + rng.uniform(-0.1, 0.1));
      } else {
        cx = rng.uniform(bw / 2 + 1, side - bw / 2 - 1);
        cy = rng.uniform(bh / 2 + 1, side - bh / 2 - 1);
      }
      Box box{cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2};
      if (box.x0 < 0 || box.y0 < 0 || box.x1 > side || box.y1 > side) continue;
      if (box.area() < 16.0) continue;
      bool clash = false;
      for (const auto& o : scene.objects)
        if (iou(box, o.box) > 0.3) clash = true;
      if (clash) continue;
      ObjectInstance obj;
      obj.box = box;
      obj.category = cat;
      for (int k = 0; k < 3; ++k) obj.jitter[k] = rng.uniform(-0.1, 0.1);
      scene.objects.push_back(obj);
      placed = true;
    }
  }
  return scene;
}

namespace {
// Mild pattern modulation keeps the in-box mean color close to the base color.
double texture_mod(int texture, std::size_t y, std::size_t x) {
  switch (texture % 4) {
    case 0: return 1.0;
    case 1: return (y / 2) % 2 == 0 ? 1.0 : 0.9;
    case 2: return (x / 2) % 2 == 0 ? 1.0 : 0.9;
    default: return ((x / 2 + y / 2) % 2) == 0 ? 1.0 : 0.9;
  }
}
}  // namespace

Image render(const Scene& scene, const Vocabulary& vocab) {
  Image img(scene.h, scene.w);
  Rng rng(hash_combine(scene.seed, std::string("render")));
  for (std::size_t y = 0; y < scene.h; ++y)
    for (std::size_t x = 0; x < scene.w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) =
            std::clamp(scene.brightness + rng.uniform(-0.05, 0.05), 0.0, 1.0);

  // Clutter: gray rectangles, no category color semantics.
  const double d = scene.clutter_density;
  int n_clutter = int(std::floor(d));
  if (rng.uniform() < d - std::floor(d)) ++n_clutter;
  for (int n = 0; n < n_clutter; ++n) {
    const std::size_t cw = 4 + rng.uniform_int(9);
    const std::size_t ch = 4 + rng.uniform_int(9);
    const std::size_t x0 = rng.uniform_int(scene.w - cw);
    const std::size_t y0 = rng.uniform_int(scene.h - ch);
    const double g = rng.uniform(0.2, 0.8);
    for (std::size_t y = y0; y < y0 + ch; ++y)
      for (std::size_t x = x0; x < x0 + cw; ++x)
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = g;
  }

  for (const auto& obj : scene.objects) {
    const auto& spec = vocab.at(obj.category);
    std::array<double, 3> color;
    for (int k = 0; k < 3; ++k)
      color[k] = std::clamp(spec.appearance[k] + obj.jitter[k], 0.0, 1.0);
    const auto x0 = std::size_t(std::max(0.0, std::ceil(obj.box.x0)));
    const auto y0 = std::size_t(std::max(0.0, std::ceil(obj.box.y0)));
    const auto x1 = std::size_t(std::min(double(scene.w), std::floor(obj.box.x1)));
    const auto y1 = std::size_t(std::min(double(scene.h), std::floor(obj.box.y1)));
    for (std::size_t y = y0; y < y1; ++y)
      for (std::size_t x = x0; x < x1; ++x) {
        const double m = texture_mod(spec.texture, y - y0, x - x0);
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = color[c] * m;
      }
  }
  return img;
}

std::vector<std::size_t> label_image(const Scene& scene, const LabelPolicy& policy,
                                     std::uint64_t seed) {
  std::set<std::size_t> present;
  for (const auto& o : scene.objects) present.insert(o.category);
  std::vector<std::size_t> labels(present.begin(), present.end());
  if (!policy.federated || policy.p_keep >= 1.0 || labels.empty()) return labels;
  Rng rng(hash_combine(seed, std::string("labels")));
  std::vector<std::size_t> kept;
  for (std::size_t c : labels)
    if (rng.uniform() < policy.p_keep) kept.push_back(c);
  if (kept.empty())  // at least one label per image
    kept.push_back(labels[rng.uniform_int(labels.size())]);
  return kept;
}

std::vector<ImageRecord> make_dataset(const DatasetGenConfig& cfg,
                                      const Vocabulary& vocab) {
  std::vector<ImageRecord> out;
  out.reserve(cfg.num_images);
  for (std::size_t i = 0; i < cfg.num_images; ++i) {
    const std::uint64_t s = hash_combine(cfg.seed, i);
    Scene scene = gen_scene(cfg.profile, vocab, cfg.allowed_categories, s,
                            cfg.image_size);
    scene.dataset_id = cfg.dataset_id;
    ImageRecord rec;
    rec.image = render(scene, vocab);
    rec.labels = label_image(scene, cfg.labels, s);
    rec.dataset_id = cfg.dataset_id;
    rec.gt = scene.objects;
    out.push_back(std::move(rec));
  }
  return out;
}

namespace {
std::string image_file_name(const std::string& dataset_path, std::size_t idx) {
  return std::filesystem::path(dataset_path).filename().string() + "." +
         std::to_string(idx) + ".bin";
}
}  // namespace

void write_dataset(const std::string& path, const std::vector<ImageRecord>& records,
                   bool inline_images) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset: " + path);
  const auto dir = std::filesystem::path(path).parent_path();
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    nlohmann::json j;
    j["version"] = 1;
    j["dataset_id"] = r.dataset_id;
    j["labels"] = r.labels;
    nlohmann::json gt = nlohmann::json::array();
    for (const auto& o : r.gt) {
      gt.push_back({{"box", {o.box.x0, o.box.y0, o.box.x1, o.box.y1}},
                    {"cat", o.category},
                    {"jitter", o.jitter}});
    }
    j["gt"] = gt;
    if (inline_images) {
      nlohmann::json rows = nlohmann::json::array();
      for (std::size_t y = 0; y < r.image.h; ++y) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t x = 0; x < r.image.w; ++x)
          row.push_back({r.image.at(y, x, 0), r.image.at(y, x, 1),
                         r.image.at(y, x, 2)});
        rows.push_back(row);
      }
      j["image"] = rows;
    } else {
      const std::string fname = image_file_name(path, i);
      std::ofstream bin(dir / fname, std::ios::binary);
      if (!bin) throw std::runtime_error("cannot write image file: " + fname);
      std::vector<float> buf(r.image.data.begin(), r.image.data.end());
      bin.write(reinterpret_cast<const char*>(buf.data()),
                std::streamsize(buf.size() * sizeof(float)));
      j["image_file"] = fname;
      j["shape"] = {r.image.h, r.image.w, 3};
    }
    out << j.dump() << "\n";
  }
}

std::vector<ImageRecord> read_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read dataset: " + path);
  const auto dir = std::filesystem::path(path).parent_path();
  std::vector<ImageRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": malformed record: " + e.what());
    }
    if (!j.contains("version") || j["version"] != 1)
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": unsupported record version");
    ImageRecord r;
    r.dataset_id = j.value("dataset_id", 0);
    r.labels = j.at("labels").get<std::vector<std::size_t>>();
    for (const auto& g : j.at("gt")) {
      ObjectInstance o;
      const auto b = g.at("box").get<std::array<double, 4>>();
      o.box = {b[0], b[1], b[2], b[3]};
      o.category = g.at("cat").get<std::size_t>();
      if (g.contains("jitter")) o.jitter = g["jitter"].get<std::array<double, 3>>();
      r.gt.push_back(o);
    }
    if (j.contains("image")) {
      const auto& rows = j["image"];
      r.image = Image(rows.size(), rows.empty() ? 0 : rows[0].size());
      for (std::size_t y = 0; y < r.image.h; ++y)
        for (std::size_t x = 0; x < r.image.w; ++x)
          for (int c = 0; c < 3; ++c)
            r.image.at(y, x, c) = rows[y][x][c].get<double>();
    } else if (j.contains("image_file")) {
      const auto shape = j.at("shape").get<std::array<std::size_t, 3>>();
      r.image = Image(shape[0], shape[1]);
      std::ifstream bin(dir / j["image_file"].get<std::string>(),
                        std::ios::binary);
      if (!bin)
        throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                 ": missing image file " +
                                 j["image_file"].get<std::string>());
      std::vector<float> buf(shape[0] * shape[1] * 3);
      bin.read(reinterpret_cast<char*>(buf.data()),
               std::streamsize(buf.size() * sizeof(float)));
      if (std::size_t(bin.gcount()) != buf.size() * sizeof(float))
        throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                 ": truncated image file");
      std::copy(buf.begin(), buf.end(), r.image.data.begin());
    } else {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": record has neither image nor image_file");
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace wsovod
