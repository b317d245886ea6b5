#include "cg3d/inference/inference.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include "cg3d/nn/kernels.hpp"
#include "cg3d/util/binary_io.hpp"
#include "cg3d/util/error.hpp"

namespace cg3d {

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) sum += out[i] = std::exp(logits[i] - mx);
  for (double& v : out) v /= sum;
  return out;
}

std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

namespace {

double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

std::vector<PointCloud> strided(const Dataset& ds, std::span<const std::size_t> indices, int n_points) {
  std::vector<PointCloud> out;
  out.reserve(indices.size());
  for (auto i : indices) {
    if (i >= ds.size()) throw ConfigError("record index " + std::to_string(i) + " out of range");
    out.push_back(resample(ds.cloud(i), static_cast<std::size_t>(n_points), nullptr));
  }
  return out;
}

}  // namespace

TextClassBank build_text_bank(Model<float>& model, std::span<const std::string> classes,
                              std::string_view template_text) {
  if (classes.empty()) throw ConfigError("text bank: class list is empty");
  std::set<std::string> seen;
  std::vector<std::string> captions;
  for (const auto& c : classes) {
    if (!seen.insert(c).second) throw ConfigError("text bank: duplicate class \"" + c + "\"");
    captions.push_back(render_caption(template_text, c));
  }
  TextClassBank bank;
  bank.classes.assign(classes.begin(), classes.end());
  bank.template_text = template_text;
  bank.embeddings = model.encode_captions(captions);
  return bank;
}

ZeroShotResult classify_embedding(std::span<const float> f3d, const TextClassBank& bank) {
  if (f3d.size() != bank.embeddings.cols())
    throw ConfigError("zero-shot: embedding width " + std::to_string(f3d.size()) + " differs from bank width " +
                      std::to_string(bank.embeddings.cols()));
  std::vector<double> logits(bank.embeddings.rows());
  for (std::size_t c = 0; c < logits.size(); ++c) logits[c] = dot(f3d, bank.embeddings.row(c));
  ZeroShotResult r;
  r.scores = softmax(logits);
  r.label = static_cast<int>(argmax(r.scores));
  return r;
}

std::vector<ZeroShotResult> zero_shot_classify(Model<float>& model, std::span<const PointCloud> clouds,
                                               const TextClassBank& bank, int n_points) {
  std::vector<PointCloud> in;
  in.reserve(clouds.size());
  for (const auto& pc : clouds) in.push_back(resample(pc, static_cast<std::size_t>(n_points), nullptr));
  const auto f = model.encode_points(in);
  std::vector<ZeroShotResult> out;
  for (std::size_t i = 0; i < in.size(); ++i) out.push_back(classify_embedding(f.row(i), bank));
  return out;
}

double zero_shot_accuracy(Model<float>& model, const Dataset& ds, std::span<const std::size_t> indices,
                          std::span<const std::string> classes, int n_points, std::string_view template_text) {
  if (indices.empty()) return 0.0;
  const auto bank = build_text_bank(model, classes, template_text);
  const auto f = model.encode_points(strided(ds, indices, n_points));
  std::size_t hit = 0;
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto& name = ds.manifest().records[indices[r]].class_name;
    if (bank.classes[static_cast<std::size_t>(classify_embedding(f.row(r), bank).label)] == name) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(indices.size());
}

EmbeddingIndex build_point_index(Model<float>& model, const Dataset& ds, std::span<const std::size_t> indices,
                                 int n_points) {
  EmbeddingIndex idx;
  for (auto i : indices) {
    idx.ids.push_back(ds.manifest().records.at(i).id);
    idx.classes.push_back(ds.manifest().records.at(i).class_name);
  }
  idx.embeddings = model.encode_points(strided(ds, indices, n_points));
  return idx;
}

std::vector<RetrievalHit> retrieve(std::span<const float> query, const EmbeddingIndex& index, std::size_t topk) {
  if (topk < 1) throw ConfigError("retrieve: topk must be >= 1");
  if (index.ids.empty()) return {};
  if (query.size() != index.embeddings.cols())
    throw ConfigError("retrieve: query width " + std::to_string(query.size()) + " differs from index width " +
                      std::to_string(index.embeddings.cols()));
  std::vector<RetrievalHit> hits;
  hits.reserve(index.ids.size());
  for (std::size_t i = 0; i < index.ids.size(); ++i) hits.push_back({index.ids[i], dot(query, index.embeddings.row(i))});
  std::sort(hits.begin(), hits.end(), [](const RetrievalHit& a, const RetrievalHit& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.id < b.id;
  });
  hits.resize(std::min(topk, hits.size()));
  for (std::size_t r = 0; r < hits.size(); ++r) hits[r].rank = static_cast<int>(r + 1);
  return hits;
}

KMeansResult kmeans(std::span<const Vec3> points, int k, std::uint64_t seed, int max_iter) {
  const std::size_t m = points.size();
  if (k < 1 || static_cast<std::size_t>(k) > m)
    throw ConfigError("k-means: k = " + std::to_string(k) + " needs 1 <= k <= " + std::to_string(m) + " points");
  const auto kk = static_cast<std::size_t>(k);
  Rng rng(seed);
  KMeansResult r;
  r.centroids.push_back(points[uniform_index(rng, m)]);
  std::vector<double> d(m);
  for (std::size_t i = 0; i < m; ++i) d[i] = squared_distance(points[i], r.centroids[0]);
  // Greedy seeding: 2 + floor(ln k) D^2-weighted candidates per centre, keep
  // the one giving the lowest potential (first drawn on ties).
  const int trials = 2 + static_cast<int>(std::floor(std::log(static_cast<double>(kk))));
  std::vector<double> cand_d(m), best_d(m);
  while (r.centroids.size() < kk) {
    const double total = std::accumulate(d.begin(), d.end(), 0.0);
    std::size_t best = 0;
    double best_pot = std::numeric_limits<double>::infinity();
    for (int t = 0; t < trials; ++t) {
      std::size_t pick = m - 1;
      if (total > 0) {
        const double u = uniform01(rng) * total;
        double run = 0;
        for (std::size_t i = 0; i < m; ++i) {
          run += d[i];
          if (run > u) {
            pick = i;
            break;
          }
        }
      } else {
        pick = uniform_index(rng, m);
      }
      double pot = 0;
      for (std::size_t i = 0; i < m; ++i) {
        cand_d[i] = std::min(d[i], squared_distance(points[i], points[pick]));
        pot += cand_d[i];
      }
      if (pot < best_pot) {
        best_pot = pot;
        best = pick;
        best_d.swap(cand_d);
      }
    }
    r.centroids.push_back(points[best]);
    d = best_d;
  }

  std::vector<double> flat(3 * m), cflat(3 * kk), dist(m);
  for (std::size_t i = 0; i < m; ++i) {
    flat[3 * i] = points[i].x;
    flat[3 * i + 1] = points[i].y;
    flat[3 * i + 2] = points[i].z;
  }
  r.assignment.assign(m, -1);
  std::vector<int> next(m);
  for (int it = 0; it < max_iter; ++it) {
    for (std::size_t c = 0; c < kk; ++c) {
      cflat[3 * c] = r.centroids[c].x;
      cflat[3 * c + 1] = r.centroids[c].y;
      cflat[3 * c + 2] = r.centroids[c].z;
    }
    nn::kernels::assign_nearest(flat.data(), m, cflat.data(), kk, next.data(), dist.data());
    const double obj = std::accumulate(dist.begin(), dist.end(), 0.0);
    r.objective.push_back(obj);
    r.iterations = it + 1;
    if (next == r.assignment) break;
    r.assignment = next;

    std::vector<Vec3> sum(kk, Vec3{0, 0, 0});
    std::vector<std::size_t> count(kk, 0);
    for (std::size_t i = 0; i < m; ++i) {
      const auto c = static_cast<std::size_t>(r.assignment[i]);
      sum[c] = sum[c] + points[i];
      ++count[c];
    }
    for (std::size_t c = 0; c < kk; ++c) {
      if (count[c] > 0) {
        const auto n = static_cast<double>(count[c]);
        r.centroids[c] = {sum[c].x / n, sum[c].y / n, sum[c].z / n};
        continue;
      }
      std::size_t far = 0;
      double fd = -1;
      for (std::size_t i = 0; i < m; ++i) {
        const double di = squared_distance(points[i], r.centroids[static_cast<std::size_t>(r.assignment[i])]);
        if (di > fd) {
          fd = di;
          far = i;
        }
      }
      r.centroids[c] = points[far];
    }
  }
  return r;
}

namespace {

double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

std::vector<std::size_t> strip_floor_ceiling(const SceneCloud& scene) {
  std::vector<std::size_t> kept;
  if (scene.points.empty()) return kept;
  std::vector<double> z;
  z.reserve(scene.size());
  for (const auto& p : scene.points) z.push_back(p.z);
  const double lo = percentile(z, 0.05), hi = percentile(z, 0.95);
  for (std::size_t i = 0; i < scene.size(); ++i)
    if (z[i] > lo && z[i] < hi) kept.push_back(i);
  return kept;
}

ClusterSet cluster_scene(const SceneCloud& scene, int k, std::uint64_t seed, bool strip_floor) {
  std::vector<std::size_t> kept;
  if (strip_floor) {
    kept = strip_floor_ceiling(scene);
  } else {
    kept.resize(scene.size());
    std::iota(kept.begin(), kept.end(), std::size_t{0});
  }
  if (k < 1 || static_cast<std::size_t>(k) > kept.size())
    throw ConfigError("cluster: k = " + std::to_string(k) + " needs 1 <= k <= " + std::to_string(kept.size()) +
                      " points" + (strip_floor ? " after floor/ceiling stripping" : ""));
  std::vector<Vec3> pts;
  pts.reserve(kept.size());
  for (auto i : kept) pts.push_back(scene.points[i]);
  auto km = kmeans(pts, k, seed);
  ClusterSet cs;
  cs.k = k;
  cs.assignment.assign(scene.size(), -1);
  cs.centroids = std::move(km.centroids);
  cs.members.resize(static_cast<std::size_t>(k));
  for (std::size_t j = 0; j < kept.size(); ++j) {
    cs.assignment[kept[j]] = km.assignment[j];
    cs.members[static_cast<std::size_t>(km.assignment[j])].push_back(kept[j]);
  }
  return cs;
}

void embed_clusters(ClusterSet& cs, const SceneCloud& scene, Model<float>& model, int n_points) {
  std::vector<PointCloud> clouds;
  for (const auto& mem : cs.members) {
    PointCloud pc;
    for (auto i : mem) pc.points.push_back(scene.points[i]);
    clouds.push_back(resample(normalize_unit_sphere(std::move(pc)), static_cast<std::size_t>(n_points), nullptr));
  }
  cs.embeddings = model.encode_points(clouds);
}

std::vector<ClusterScore> rank_clusters(std::span<const float> text, const nn::Tensor<float>& cluster_embeddings) {
  if (text.size() != cluster_embeddings.cols()) throw ConfigError("scene query: clusters are not embedded");
  std::vector<double> logits(cluster_embeddings.rows());
  for (std::size_t c = 0; c < logits.size(); ++c) logits[c] = dot(text, cluster_embeddings.row(c));
  const auto p = softmax(logits);
  std::vector<ClusterScore> out;
  for (std::size_t c = 0; c < p.size(); ++c) out.push_back({static_cast<int>(c), p[c]});
  std::stable_sort(out.begin(), out.end(), [](const ClusterScore& a, const ClusterScore& b) { return a.score > b.score; });
  for (std::size_t r = 0; r < out.size(); ++r) out[r].rank = static_cast<int>(r + 1);
  return out;
}

std::vector<ClusterScore> scene_query(const ClusterSet& cs, Model<float>& model, const std::string& text) {
  if (split_words(text).empty()) throw ConfigError("scene query: empty query text");
  const std::string caption(text);
  const auto f = model.encode_captions(std::span<const std::string>(&caption, 1));
  return rank_clusters(f.row(0), cs.embeddings);
}

void export_embeddings(Model<float>& model, const Dataset& ds, std::span<const std::string> modalities,
                       const std::string& out_path, int n_points, bool use_prompts) {
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto& recs = ds.manifest().records;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return recs[a].id < recs[b].id; });
  std::vector<std::string> mods(modalities.begin(), modalities.end());
  std::sort(mods.begin(), mods.end());
  std::map<std::string, nn::Tensor<float>> emb;
  for (const auto& mod : mods) {
    if (mod == "3d") {
      emb[mod] = model.encode_points(strided(ds, order, n_points));
    } else if (mod == "image") {
      std::vector<DepthImage> imgs;
      for (auto i : order) imgs.push_back(ds.image(i));
      emb[mod] = model.encode_images(imgs, use_prompts);
    } else if (mod == "text") {
      std::vector<std::string> caps;
      for (auto i : order) caps.push_back(recs[i].caption);
      emb[mod] = model.encode_captions(caps);
    } else {
      throw ConfigError("export: unknown modality \"" + mod + "\" (valid: 3d, image, text)");
    }
  }
  std::string out = "id,class,modality";
  for (int c = 0; c < model.config.embed_dim; ++c) out += ",e" + std::to_string(c);
  out += '\n';
  char buf[32];
  for (std::size_t r = 0; r < order.size(); ++r)
    for (const auto& mod : mods) {
      const auto& rec = recs[order[r]];
      out += rec.id + ',' + rec.class_name + ',' + mod;
      for (float v : emb[mod].row(r)) {
        std::snprintf(buf, sizeof buf, ",%.9g", static_cast<double>(v));
        out += buf;
      }
      out += '\n';
    }
  io::write_text_file(out_path, out);
}

double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw ConfigError("ARI: partitions differ in size");
  const auto n = static_cast<double>(a.size());
  if (a.size() < 2) return 1.0;
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> ra, rb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1;
    ra[a[i]] += 1;
    rb[b[i]] += 1;
  }
  auto c2 = [](double x) { return x * (x - 1) / 2; };
  double sj = 0, sa = 0, sb = 0;
  for (const auto& [_, v] : joint) sj += c2(v);
  for (const auto& [_, v] : ra) sa += c2(v);
  for (const auto& [_, v] : rb) sb += c2(v);
  const double expected = sa * sb / c2(n);
  const double mx = 0.5 * (sa + sb);
  if (mx == expected) return 1.0;
  return (sj - expected) / (mx - expected);
}

}  // namespace cg3d
