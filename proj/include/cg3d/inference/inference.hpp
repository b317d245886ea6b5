#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cg3d/corpus/corpus.hpp"
#include "cg3d/geometry/scene.hpp"
#include "cg3d/model/model.hpp"

namespace cg3d {

inline constexpr std::string_view kDefaultQueryTemplate = "this is a {OBJECT}";

// Softmax at temperature 1, computed in double.
std::vector<double> softmax(std::span<const double> logits);
// Index of the largest value; ties go to the lowest index.
std::size_t argmax(std::span<const double> v);

struct TextClassBank {
  std::vector<std::string> classes;
  std::string template_text;
  nn::Tensor<float> embeddings;  // classes x d, unit rows
};

// Throws ConfigError for an empty or duplicated class list.
TextClassBank build_text_bank(Model<float>& model, std::span<const std::string> classes,
                              std::string_view template_text = kDefaultQueryTemplate);

struct ZeroShotResult {
  int label = 0;
  std::vector<double> scores;  // softmax over classes
};

ZeroShotResult classify_embedding(std::span<const float> f3d, const TextClassBank& bank);
// Clouds are taken as given (normalized) and strided down to n_points.
std::vector<ZeroShotResult> zero_shot_classify(Model<float>& model, std::span<const PointCloud> clouds,
                                               const TextClassBank& bank, int n_points = 256);

// Fraction of records whose zero-shot label, over the bank built from
// `classes`, equals the record's class.
double zero_shot_accuracy(Model<float>& model, const Dataset& ds, std::span<const std::size_t> indices,
                          std::span<const std::string> classes, int n_points = 256,
                          std::string_view template_text = kDefaultQueryTemplate);

struct RetrievalHit {
  std::string id;
  double similarity = 0;
  int rank = 0;  // 1-based
};

struct EmbeddingIndex {
  std::vector<std::string> ids;
  std::vector<std::string> classes;
  nn::Tensor<float> embeddings;  // one unit row per id
};

EmbeddingIndex build_point_index(Model<float>& model, const Dataset& ds, std::span<const std::size_t> indices,
                                 int n_points = 256);

// Hits by nonincreasing inner product, ties by id ascending; topk is cut to
// the index size. Throws ConfigError for topk < 1 or a width mismatch.
std::vector<RetrievalHit> retrieve(std::span<const float> query, const EmbeddingIndex& index, std::size_t topk);

// Lloyd's algorithm on xyz with greedy k-means++ seeding:
//  * rng = Rng(seed); the first centre is points[uniform_index(rng, M)];
//  * every further centre draws 2 + floor(ln k) candidates, each from
//    u = uniform01(rng) * sum(D) over the squared distances D to the nearest
//    chosen centre, taking the first index whose running sum exceeds u
//    (uniform_index(rng, M) when sum(D) == 0); the candidate with the lowest
//    resulting sum of min distances wins, the earliest drawn on ties;
//  * each iteration assigns every point to its nearest centre (lowest index on
//    ties), records the objective, stops if nothing changed, then moves each
//    centre, in cluster order, to sum / count of its points; an empty
//    cluster's centre jumps to the point farthest from the current centre of
//    its assigned cluster (lowest index on ties);
//  * at most max_iter assignment passes.
// Sums run in point-index order in double. Throws ConfigError unless
// 1 <= k <= M.
struct KMeansResult {
  std::vector<int> assignment;
  std::vector<Vec3> centroids;
  std::vector<double> objective;  // after each assignment pass
  int iterations = 0;
};
KMeansResult kmeans(std::span<const Vec3> points, int k, std::uint64_t seed, int max_iter = 100);

struct ClusterSet {
  int k = 0;
  // Per scene point: cluster index, or -1 for points removed by strip_floor.
  std::vector<int> assignment;
  std::vector<Vec3> centroids;
  std::vector<std::vector<std::size_t>> members;  // scene point indices per cluster
  nn::Tensor<float> embeddings;                  // k x d once encoded
};

// Points with height (z) at or below the 5th percentile or at or above the
// 95th (linear interpolation) are dropped when strip_floor is set.
std::vector<std::size_t> strip_floor_ceiling(const SceneCloud& scene);

// Geometry only; embeddings stay empty. Throws ConfigError when fewer than k
// points survive stripping.
ClusterSet cluster_scene(const SceneCloud& scene, int k, std::uint64_t seed, bool strip_floor);
// Each cluster is recentred, scaled into the unit sphere, strided to n_points
// and encoded.
void embed_clusters(ClusterSet& cs, const SceneCloud& scene, Model<float>& model, int n_points = 256);

struct ClusterScore {
  int cluster = 0;
  double score = 0;
  int rank = 0;  // 1-based
};

// softmax(<f_text, F_3D>) over clusters, sorted by score (lowest index on
// ties). Throws ConfigError for an empty query or unembedded clusters.
std::vector<ClusterScore> rank_clusters(std::span<const float> text, const nn::Tensor<float>& cluster_embeddings);
std::vector<ClusterScore> scene_query(const ClusterSet& cs, Model<float>& model, const std::string& text);

// CSV "id,class,modality,e0..e{d-1}", rows ordered by id then modality.
// Modalities: "3d", "image" (stored images), "text" (record captions).
void export_embeddings(Model<float>& model, const Dataset& ds, std::span<const std::string> modalities,
                       const std::string& out_path, int n_points = 256, bool use_prompts = false);

double adjusted_rand_index(std::span<const int> a, std::span<const int> b);

}  // namespace cg3d
