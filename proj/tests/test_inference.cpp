#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "cg3d/geometry/scene.hpp"
#include "cg3d/geometry/shapes.hpp"
#include "cg3d/inference/inference.hpp"
#include "cg3d/util/binary_io.hpp"
#include "cg3d/util/error.hpp"
#include "fixture.hpp"
#include "oracles.hpp"

using namespace cg3d;

namespace {

Model<float> tiny_model(std::uint64_t seed = 1) {
  return Model<float>(fixture::tiny_config().encoder, fixture::tiny_dataset().vocab(), seed);
}

}  // namespace

TEST_CASE("softmax and argmax") {
  const std::vector<double> l{1, 2, 1};
  const auto p = softmax(l);
  const double z = 2 * std::exp(1.0) + std::exp(2.0);
  CHECK(p[0] == doctest::Approx(std::exp(1.0) / z).epsilon(1e-14));
  CHECK(p[1] == doctest::Approx(std::exp(2.0) / z).epsilon(1e-14));
  CHECK(std::abs(p[0] - 0.21194) < 1e-5);
  CHECK(std::abs(p[1] - 0.57612) < 1e-5);
  const std::vector<double> big{1000, 1000};
  CHECK(softmax(big)[0] == 0.5);
  const std::vector<double> tie{0.3, 0.7, 0.7};
  CHECK(argmax(tie) == 1);
}

TEST_CASE("zero-shot: text bank and classification") {
  auto m = tiny_model();
  const std::vector<std::string> classes{"sphere", "cube", "cone"};
  const auto bank = build_text_bank(m, classes);
  CHECK(bank.embeddings.rows() == 3);
  CHECK(bank.template_text == "this is a {OBJECT}");
  CHECK_THROWS_AS(build_text_bank(m, std::vector<std::string>{}), ConfigError);
  CHECK_THROWS_AS(build_text_bank(m, std::vector<std::string>{"cube", "cube"}), ConfigError);
  CHECK_THROWS_AS(build_text_bank(m, classes, "no placeholder"), ConfigError);

  // The text embedding of a class is classified as that class.
  const auto r = classify_embedding(bank.embeddings.row(1), bank);
  CHECK(r.label == 1);
  CHECK(std::accumulate(r.scores.begin(), r.scores.end(), 0.0) == doctest::Approx(1.0));

  const auto& ds = fixture::tiny_dataset();
  std::vector<PointCloud> clouds{ds.cloud(0), ds.cloud(15)};
  const auto zs = zero_shot_classify(m, clouds, bank, 64);
  CHECK(zs.size() == 2);
  for (const auto& z : zs) CHECK(z.scores.size() == 3);
  const std::vector<std::size_t> idx{0, 1, 2};
  const double acc = zero_shot_accuracy(m, ds, idx, classes, 64);
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
}

TEST_CASE("retrieval: self hit, tie order, errors") {
  auto m = tiny_model();
  const auto& ds = fixture::tiny_dataset();
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const auto index = build_point_index(m, ds, idx, 64);
  CHECK(index.ids.size() == ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto hits = retrieve(index.embeddings.row(i), index, 1);
    REQUIRE(hits.size() == 1);
    CHECK(hits[0].id == index.ids[i]);
    CHECK(hits[0].rank == 1);
  }
  CHECK(retrieve(index.embeddings.row(0), index, 1000).size() == ds.size());
  CHECK_THROWS_AS(retrieve(index.embeddings.row(0), index, 0), ConfigError);
  const std::vector<float> narrow{1, 0};
  CHECK_THROWS_AS(retrieve(narrow, index, 1), ConfigError);

  EmbeddingIndex tie;
  tie.ids = {"b", "a", "c"};
  tie.classes = {"x", "x", "x"};
  tie.embeddings = nn::Tensor<float>(3, 2, std::vector<float>{1, 0, 1, 0, 0, 1});
  const std::vector<float> q{1, 0};
  const auto hits = retrieve(q, tie, 3);
  CHECK(hits[0].id == "a");
  CHECK(hits[1].id == "b");
  CHECK(hits[2].id == "c");
  CHECK(hits[2].rank == 3);
}

TEST_CASE("k-means matches a brute-force Lloyd implementation exactly") {
  for (std::uint64_t inst = 0; inst < 10; ++inst) {
    Rng rng(100 + inst);
    std::vector<Vec3> pts(30);
    for (auto& p : pts) p = {normal01(rng), normal01(rng), normal01(rng)};
    const int k = 2 + static_cast<int>(inst % 4);
    const auto got = kmeans(pts, k, inst);
    const auto want = oracle::brute_force_lloyd(pts, k, inst);
    CHECK(got.assignment == want.assign);
    CHECK(got.centroids == want.cent);
    for (std::size_t i = 1; i < got.objective.size(); ++i) CHECK(got.objective[i] <= got.objective[i - 1]);
  }
}

TEST_CASE("k-means: blobs, k = 1, duplicates, errors") {
  Rng rng(1);
  std::vector<Vec3> pts;
  std::vector<int> truth;
  for (int b = 0; b < 2; ++b)
    for (int i = 0; i < 40; ++i) {
      pts.push_back({b * 10.0 + 0.2 * normal01(rng), 0.2 * normal01(rng), 0.2 * normal01(rng)});
      truth.push_back(b);
    }
  const auto two = kmeans(pts, 2, 3);
  CHECK(adjusted_rand_index(two.assignment, truth) == 1.0);

  const auto one = kmeans(pts, 1, 0);
  const Vec3 c = centroid(pts);
  CHECK(std::abs(one.centroids[0].x - c.x) < 1e-12);
  CHECK(std::all_of(one.assignment.begin(), one.assignment.end(), [](int a) { return a == 0; }));

  const std::vector<Vec3> same(5, Vec3{1, 1, 1});
  const auto dup = kmeans(same, 3, 0);
  CHECK(dup.assignment.size() == 5);

  CHECK_THROWS_AS(kmeans(pts, 0, 0), ConfigError);
  CHECK_THROWS_AS(kmeans(pts, 81, 0), ConfigError);
  CHECK_NOTHROW(kmeans(pts, 80, 0));
}

TEST_CASE("adjusted rand index") {
  const std::vector<int> a{0, 0, 1, 1}, b{0, 0, 1, 2}, c{0, 1, 0, 1}, relabel{5, 5, 3, 3};
  CHECK(adjusted_rand_index(a, relabel) == doctest::Approx(1.0));
  CHECK(adjusted_rand_index(a, b) == doctest::Approx(oracle::ari(a, b)).epsilon(1e-12));
  CHECK(adjusted_rand_index(a, b) == doctest::Approx(4.0 / 7));
  CHECK(adjusted_rand_index(a, c) == doctest::Approx(-0.5));
  Rng rng(4);
  std::vector<int> x(60), y(60);
  for (auto& v : x) v = static_cast<int>(uniform_index(rng, 4));
  for (auto& v : y) v = static_cast<int>(uniform_index(rng, 3));
  CHECK(adjusted_rand_index(x, y) == doctest::Approx(oracle::ari(x, y)).epsilon(1e-12));
  CHECK_THROWS_AS(adjusted_rand_index(a, std::vector<int>{0}), ConfigError);
}

TEST_CASE("floor/ceiling strip drops the bottom and top 5 percent") {
  SceneCloud s;
  for (int i = 0; i < 100; ++i) s.points.push_back({0, 0, static_cast<double>((i * 37) % 100)});
  const auto kept = strip_floor_ceiling(s);
  CHECK(kept.size() == 90);  // p5 = 4.95, p95 = 94.05
  for (auto i : kept) {
    CHECK(s.points[i].z >= 5);
    CHECK(s.points[i].z <= 94);
  }

  Rng rng(2);
  std::vector<Placement> objs;
  for (int o = 0; o < 3; ++o) objs.push_back({generate_shape("sphere", 300, rng), {o * 4.0, 0, 0}, 1.0});
  const auto scene = compose_scene(objs, true);
  const auto cs = cluster_scene(scene, 3, 0, true);
  std::size_t floor_kept = 0;
  for (std::size_t i = 0; i < scene.size(); ++i)
    if (scene.object_ids[i] == kFloorId && cs.assignment[i] >= 0) ++floor_kept;
  CHECK(floor_kept == 0);
  std::vector<int> a, t;
  for (std::size_t i = 0; i < scene.size(); ++i)
    if (cs.assignment[i] >= 0) {
      a.push_back(cs.assignment[i]);
      t.push_back(scene.object_ids[i]);
    }
  CHECK(adjusted_rand_index(a, t) > 0.99);
  std::size_t members = 0;
  for (const auto& mm : cs.members) members += mm.size();
  CHECK(members == a.size());
  CHECK_THROWS_AS(cluster_scene(scene, 0, 0, true), ConfigError);
}

TEST_CASE("scene query: ranking, uniform scores, permutation") {
  const std::vector<float> text{1, 0, 0};
  const nn::Tensor<float> same(3, 3, std::vector<float>{0, 1, 0, 0, 1, 0, 0, 1, 0});
  const auto u = rank_clusters(text, same);
  for (int i = 0; i < 3; ++i) {
    CHECK(u[i].cluster == i);
    CHECK(u[i].rank == i + 1);
    CHECK(u[i].score == doctest::Approx(1.0 / 3));
  }
  const nn::Tensor<float> e(3, 3, std::vector<float>{0, 1, 0, 1, 0, 0, 0.6f, 0.8f, 0});
  const auto r = rank_clusters(text, e);
  CHECK(r[0].cluster == 1);
  CHECK(r[1].cluster == 2);
  CHECK(r[2].cluster == 0);
  const nn::Tensor<float> perm(3, 3, std::vector<float>{0.6f, 0.8f, 0, 0, 1, 0, 1, 0, 0});
  const auto rp = rank_clusters(text, perm);
  CHECK(rp[0].cluster == 2);
  CHECK(rp[0].score == r[0].score);
  CHECK(rp[1].cluster == 0);
  CHECK(rp[1].score == r[1].score);

  auto m = tiny_model();
  Rng rng(5);
  std::vector<Placement> objs;
  for (const char* c : {"sphere", "cube", "cone"}) objs.push_back({generate_shape(c, 200, rng), {0, 0, 0}, 1.0});
  objs[1].translation = {4, 0, 0};
  objs[2].translation = {0, 4, 0};
  const auto scene = compose_scene(objs, false);
  auto cs = cluster_scene(scene, 3, 1, false);
  CHECK_THROWS_AS(scene_query(cs, m, "this is a cube"), ConfigError);
  embed_clusters(cs, scene, m, 64);
  CHECK(cs.embeddings.rows() == 3);
  const auto q = scene_query(cs, m, "this is a cube");
  CHECK(q.size() == 3);
  double total = 0;
  for (const auto& s : q) total += s.score;
  CHECK(total == doctest::Approx(1.0));
  CHECK(std::is_sorted(q.begin(), q.end(), [](const auto& a, const auto& b) { return a.score > b.score; }));
  CHECK_THROWS_AS(scene_query(cs, m, ""), ConfigError);
}

TEST_CASE("export embeddings: rows, order and norms") {
  auto m = tiny_model();
  const auto& ds = fixture::tiny_dataset();
  const auto path = fixture::temp_dir("export") + "/emb.csv";
  const std::vector<std::string> mods{"text", "3d", "image"};
  export_embeddings(m, ds, mods, path, 64);
  std::istringstream in(io::read_text_file(path));
  std::string line;
  std::getline(in, line);
  CHECK(line.rfind("id,class,modality,e0,", 0) == 0);
  std::vector<std::string> keys;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    std::istringstream ls(line);
    std::string id, cls, mod, cell;
    std::getline(ls, id, ',');
    std::getline(ls, cls, ',');
    std::getline(ls, mod, ',');
    keys.push_back(id + "," + mod);
    double n = 0;
    int cols = 0;
    while (std::getline(ls, cell, ',')) {
      n += std::stod(cell) * std::stod(cell);
      ++cols;
    }
    CHECK(cols == 16);
    CHECK(std::abs(std::sqrt(n) - 1) <= 1e-5);
  }
  CHECK(rows == 3 * ds.size());
  CHECK(std::is_sorted(keys.begin(), keys.end()));
  const std::vector<std::string> bad{"audio"};
  CHECK_THROWS_AS(export_embeddings(m, ds, bad, path, 64), ConfigError);
}
