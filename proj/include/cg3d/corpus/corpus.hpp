#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cg3d/geometry/depth.hpp"
#include "cg3d/geometry/point_cloud.hpp"
#include "cg3d/model/vocab.hpp"

namespace cg3d {

inline constexpr std::string_view kObjectPlaceholder = "{OBJECT}";

// Throws ConfigError unless the pattern holds exactly one placeholder.
void validate_template(std::string_view pattern);
// Substitutes the class name and lowercases the result.
std::string render_caption(std::string_view pattern, std::string_view class_name);
std::vector<std::string> default_templates();

struct Triplet {
  std::string id;
  std::string class_name;
  std::string pc_path;     // relative to the manifest directory
  std::string image_path;  // relative to the manifest directory
  std::string caption;
};

struct Manifest {
  std::vector<std::string> classes;
  std::vector<std::string> unseen;
  ImageMode image_mode = ImageMode::depth;
  std::vector<Triplet> records;
  std::string dir;  // where relative paths resolve; not serialized

  // Index in `classes`; throws ConfigError for unknown names.
  int class_index(std::string_view name) const;
  bool is_unseen(std::string_view name) const;
  std::string resolve(const std::string& rel) const;
};

// JSON Lines: a header object, then one object per record.
std::string format_manifest(const Manifest& m);
Manifest parse_manifest(std::string_view text, const std::string& dir);
void write_manifest(const std::string& path, const Manifest& m);
Manifest read_manifest(const std::string& path);

struct CorpusConfig {
  std::vector<std::string> classes{"sphere", "cube", "cylinder", "cone", "torus", "pyramid", "disc", "capsule"};
  std::vector<std::string> unseen{"torus", "capsule"};
  int per_class = 200;
  int n_points = 1024;
  int image_size = 64;
  ImageMode image_mode = ImageMode::depth;
  std::vector<std::string> templates = default_templates();
  std::uint64_t seed = 0;

  void validate() const;
};

// Writes pc/<id>.pcld, img/<id>.dpth and manifest.jsonl under out_dir.
// Records come class by class, in class order; ids are "<class>_<nnnn>".
Manifest build_corpus(const CorpusConfig& cfg, const std::string& out_dir);

// Record indices grouped for experiments. Every class splits by record
// ordinal: the first ceil((1 - test_fraction) * count) records form the
// training part, the rest are held out. For unseen classes the training part
// only feeds image-text pre-training of the base encoders; the 3D encoder
// never sees unseen-class records.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test_seen;
  std::vector<std::size_t> unseen_base;
  std::vector<std::size_t> unseen;
};
Split split_manifest(const Manifest& m, double test_fraction);

struct Sample {
  std::string id;
  int label = 0;
  PointCloud cloud;
  DepthImage image;
  TokenSeq tokens;
};

struct BatchOptions {
  bool train = false;
  int n_points = 256;
  AugmentConfig augment{};
  int text_len = 16;
};

// In-memory copy of every record of a manifest.
class Dataset {
 public:
  Dataset(Manifest m, Vocab vocab);

  const Manifest& manifest() const noexcept { return manifest_; }
  const Vocab& vocab() const noexcept { return vocab_; }
  std::size_t size() const noexcept { return clouds_.size(); }
  int label(std::size_t i) const { return labels_.at(i); }
  const PointCloud& cloud(std::size_t i) const { return clouds_.at(i); }
  const DepthImage& image(std::size_t i) const { return images_.at(i); }

  // Training mode augments and randomly resamples each cloud from a stream
  // derived from (seed, sample index); eval mode is deterministic and needs
  // no seed. Throws ConfigError for out-of-range indices.
  std::vector<Sample> batch(std::span<const std::size_t> indices, const BatchOptions& opt,
                            std::uint64_t seed = 0) const;

 private:
  Manifest manifest_;
  Vocab vocab_;
  std::vector<int> labels_;
  std::vector<PointCloud> clouds_;
  std::vector<DepthImage> images_;
};

// Reads the referenced files directly. IoError/FormatError messages name the
// record id.
std::vector<Sample> load_batch(const Manifest& m, const Vocab& vocab, std::span<const std::size_t> indices,
                               const BatchOptions& opt, std::uint64_t seed = 0);

// Vocabulary over every caption template rendered for every class.
Vocab corpus_vocab(const Manifest& m, std::span<const std::string> templates);

}  // namespace cg3d
