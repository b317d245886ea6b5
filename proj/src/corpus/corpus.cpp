#include "cg3d/corpus/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

#include <json.hpp>

#include "cg3d/geometry/pc_io.hpp"
#include "cg3d/geometry/shapes.hpp"
#include "cg3d/util/binary_io.hpp"
#include "cg3d/util/error.hpp"

namespace cg3d {

namespace fs = std::filesystem;
using nlohmann::json;

void validate_template(std::string_view pattern) {
  std::size_t count = 0;
  for (auto pos = pattern.find(kObjectPlaceholder); pos != std::string_view::npos;
       pos = pattern.find(kObjectPlaceholder, pos + kObjectPlaceholder.size()))
    ++count;
  if (count != 1)
    throw ConfigError("caption template \"" + std::string(pattern) + "\" must contain exactly one {OBJECT}, found " +
                      std::to_string(count));
}

std::string render_caption(std::string_view pattern, std::string_view class_name) {
  validate_template(pattern);
  std::string out(pattern);
  out.replace(out.find(kObjectPlaceholder), kObjectPlaceholder.size(), class_name);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string> default_templates() {
  return {"a photo of a {OBJECT}", "this is a {OBJECT}", "a 3d model of a {OBJECT}"};
}

int Manifest::class_index(std::string_view name) const {
  auto it = std::find(classes.begin(), classes.end(), name);
  if (it == classes.end()) throw ConfigError("class \"" + std::string(name) + "\" is not in the manifest");
  return static_cast<int>(it - classes.begin());
}

bool Manifest::is_unseen(std::string_view name) const {
  return std::find(unseen.begin(), unseen.end(), name) != unseen.end();
}

std::string Manifest::resolve(const std::string& rel) const {
  return dir.empty() ? rel : (fs::path(dir) / rel).string();
}

std::string format_manifest(const Manifest& m) {
  std::string out = json{{"classes", m.classes}, {"unseen", m.unseen}, {"image_mode", to_string(m.image_mode)}}.dump();
  out += '\n';
  for (const auto& r : m.records) {
    // ordered_json keeps the key order fixed in the file
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["class"] = r.class_name;
    j["pc_path"] = r.pc_path;
    j["image_path"] = r.image_path;
    j["caption"] = r.caption;
    out += j.dump();
    out += '\n';
  }
  return out;
}

Manifest parse_manifest(std::string_view text, const std::string& dir) {
  Manifest m;
  m.dir = dir;
  std::size_t line_no = 0, pos = 0;
  bool have_header = false;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(pos, end - pos);
    const std::size_t start = pos;
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": " + e.what(), start);
    }
    try {
      if (!have_header) {
        m.classes = j.at("classes").get<std::vector<std::string>>();
        m.unseen = j.at("unseen").get<std::vector<std::string>>();
        m.image_mode = image_mode_from_string(j.at("image_mode").get<std::string>());
        have_header = true;
        continue;
      }
      Triplet t;
      t.id = j.at("id").get<std::string>();
      t.class_name = j.at("class").get<std::string>();
      t.pc_path = j.at("pc_path").get<std::string>();
      t.image_path = j.at("image_path").get<std::string>();
      t.caption = j.at("caption").get<std::string>();
      m.records.push_back(std::move(t));
    } catch (const json::exception& e) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": " + e.what(), start);
    }
  }
  if (!have_header) throw FormatError("manifest: missing header line", 0);
  for (const auto& u : m.unseen) m.class_index(u);
  for (const auto& r : m.records) m.class_index(r.class_name);
  return m;
}

void write_manifest(const std::string& path, const Manifest& m) { io::write_text_file(path, format_manifest(m)); }

Manifest read_manifest(const std::string& path) {
  return parse_manifest(io::read_text_file(path), fs::path(path).parent_path().string());
}

void CorpusConfig::validate() const {
  if (classes.empty()) throw ConfigError("corpus: class list is empty");
  if (per_class < 1) throw ConfigError("corpus: per_class must be >= 1");
  std::set<std::string> seen;
  for (const auto& c : classes) {
    if (!is_shape_class(c)) {
      std::string valid;
      for (auto v : shape_classes()) valid += (valid.empty() ? "" : ", ") + std::string(v);
      throw ConfigError("corpus: unknown class \"" + c + "\" (valid: " + valid + ")");
    }
    if (!seen.insert(c).second) throw ConfigError("corpus: duplicate class \"" + c + "\"");
  }
  for (const auto& u : unseen)
    if (!seen.contains(u)) throw ConfigError("corpus: unseen class \"" + u + "\" is not in the class list");
  if (templates.empty()) throw ConfigError("corpus: no caption templates");
  for (const auto& t : templates) validate_template(t);
}

Manifest build_corpus(const CorpusConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "pc", ec);
  if (!ec) fs::create_directories(fs::path(out_dir) / "img", ec);
  if (ec) throw IoError("cannot create corpus directory " + out_dir + ": " + ec.message());

  Manifest m;
  m.classes = cfg.classes;
  m.unseen = cfg.unseen;
  m.image_mode = cfg.image_mode;
  m.dir = out_dir;
  for (std::size_t c = 0; c < cfg.classes.size(); ++c) {
    const std::string& name = cfg.classes[c];
    for (int i = 0; i < cfg.per_class; ++i) {
      Rng rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(i)}));
      char id[64];
      std::snprintf(id, sizeof id, "%s_%04d", name.c_str(), i);
      PointCloud pc = generate_shape(name, cfg.n_points, rng);
      pc.id = id;
      const ViewPose view = ViewPose::random(rng);
      const DepthImage img = make_image(cfg.image_mode, pc, view, cfg.image_size, cfg.image_size);
      const std::string& tmpl = cfg.templates[uniform_index(rng, cfg.templates.size())];
      Triplet t{id, name, std::string("pc/") + id + ".pcld", std::string("img/") + id + ".dpth",
                render_caption(tmpl, name)};
      write_point_cloud(m.resolve(t.pc_path), pc);
      write_depth_image(m.resolve(t.image_path), img);
      m.records.push_back(std::move(t));
    }
  }
  write_manifest((fs::path(out_dir) / "manifest.jsonl").string(), m);
  return m;
}

Split split_manifest(const Manifest& m, double test_fraction) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw ConfigError("split: test_fraction must be in [0, 1)");
  std::vector<std::size_t> count(m.classes.size(), 0), ordinal(m.records.size());
  for (std::size_t i = 0; i < m.records.size(); ++i)
    ordinal[i] = count[static_cast<std::size_t>(m.class_index(m.records[i].class_name))]++;
  Split s;
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    const auto& r = m.records[i];
    const std::size_t n = count[static_cast<std::size_t>(m.class_index(r.class_name))];
    const auto n_train = static_cast<std::size_t>(std::ceil((1.0 - test_fraction) * static_cast<double>(n)));
    const bool head = ordinal[i] < n_train;
    if (m.is_unseen(r.class_name)) (head ? s.unseen_base : s.unseen).push_back(i);
    else (head ? s.train : s.test_seen).push_back(i);
  }
  return s;
}

namespace {

Sample make_sample(const Manifest& m, const Vocab& vocab, std::size_t index, const PointCloud& cloud,
                   const DepthImage& image, const BatchOptions& opt, std::uint64_t seed) {
  const Triplet& r = m.records[index];
  Sample s;
  s.id = r.id;
  s.label = m.class_index(r.class_name);
  if (opt.train) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(index)}));
    s.cloud = resample(augment(cloud, opt.augment, rng), static_cast<std::size_t>(opt.n_points), &rng);
  } else {
    s.cloud = resample(cloud, static_cast<std::size_t>(opt.n_points), nullptr);
  }
  s.cloud.label = r.class_name;
  s.cloud.id = r.id;
  s.image = image;
  s.tokens = tokenize(r.caption, vocab, opt.text_len);
  return s;
}

void check_index(const Manifest& m, std::size_t i) {
  if (i >= m.records.size())
    throw ConfigError("record index " + std::to_string(i) + " out of range (" + std::to_string(m.records.size()) +
                      " records)");
}

template <typename F>
auto with_record_id(const Triplet& r, F&& f) {
  try {
    return f();
  } catch (const FormatError& e) {
    throw FormatError("record " + r.id + ": " + e.what(), e.offset());
  } catch (const IoError& e) {
    throw IoError("record " + r.id + ": " + e.what());
  }
}

}  // namespace

Dataset::Dataset(Manifest m, Vocab vocab) : manifest_(std::move(m)), vocab_(std::move(vocab)) {
  for (const auto& r : manifest_.records) {
    labels_.push_back(manifest_.class_index(r.class_name));
    clouds_.push_back(with_record_id(r, [&] { return read_point_cloud(manifest_.resolve(r.pc_path)); }));
    images_.push_back(with_record_id(r, [&] { return read_depth_image(manifest_.resolve(r.image_path)); }));
  }
}

std::vector<Sample> Dataset::batch(std::span<const std::size_t> indices, const BatchOptions& opt,
                                   std::uint64_t seed) const {
  std::vector<Sample> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    check_index(manifest_, i);
    out.push_back(make_sample(manifest_, vocab_, i, clouds_[i], images_[i], opt, seed));
  }
  return out;
}

std::vector<Sample> load_batch(const Manifest& m, const Vocab& vocab, std::span<const std::size_t> indices,
                               const BatchOptions& opt, std::uint64_t seed) {
  std::vector<Sample> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    check_index(m, i);
    const Triplet& r = m.records[i];
    const PointCloud pc = with_record_id(r, [&] { return read_point_cloud(m.resolve(r.pc_path)); });
    const DepthImage img = with_record_id(r, [&] { return read_depth_image(m.resolve(r.image_path)); });
    out.push_back(make_sample(m, vocab, i, pc, img, opt, seed));
  }
  return out;
}

Vocab corpus_vocab(const Manifest& m, std::span<const std::string> templates) {
  std::vector<std::string> texts;
  for (const auto& t : templates)
    for (const auto& c : m.classes) texts.push_back(render_caption(t, c));
  for (const auto& r : m.records) texts.push_back(r.caption);
  return Vocab::build(texts);
}

}  // namespace cg3d
