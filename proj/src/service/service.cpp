#include "cg3d/service/service.hpp"

#include <httplib.h>

#include <json.hpp>

#include "cg3d/geometry/pc_io.hpp"
#include "cg3d/util/error.hpp"

namespace cg3d {

using nlohmann::json;

namespace {

HttpReply reply(int status, const json& j) { return {status, j.dump()}; }
HttpReply error(int status, const std::string& msg) { return reply(status, {{"error", msg}}); }

json vec(Vec3 v) { return json::array({v.x, v.y, v.z}); }

}  // namespace

SceneService::SceneService(Model<float> model, ServiceOptions opt) : model_(std::move(model)), opt_(opt) {}

std::shared_ptr<SceneService::Session> SceneService::find(const std::string& id) const {
  std::shared_lock lock(store_mu_);
  auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

HttpReply SceneService::upload(std::string_view body) {
  PointCloud pc;
  try {
    pc = parse_point_cloud(std::span<const char>(body.data(), body.size()));
    validate(pc);
  } catch (const FormatError& e) {
    return reply(400, {{"error", e.what()}, {"offset", e.offset()}});
  } catch (const Error& e) {
    return error(400, e.what());
  }
  if (pc.size() > opt_.max_points)
    return error(413, "scene has " + std::to_string(pc.size()) + " points, limit is " +
                          std::to_string(opt_.max_points));
  auto s = std::make_shared<Session>();
  s->scene.points = std::move(pc.points);
  const std::size_t n = s->scene.size();
  const std::string id = "scene-" + std::to_string(next_id_.fetch_add(1));
  {
    std::unique_lock lock(store_mu_);
    sessions_.emplace(id, std::move(s));
  }
  return reply(200, {{"scene_id", id}, {"n_points", n}});
}

HttpReply SceneService::cluster(const std::string& id, std::string_view body) {
  auto s = find(id);
  if (!s) return error(404, "unknown scene " + id);
  json req;
  try {
    req = json::parse(body.empty() ? std::string_view("{}") : body);
  } catch (const json::parse_error& e) {
    return reply(400, {{"error", e.what()}, {"offset", e.byte}});
  }
  if (!req.is_object()) return error(400, "cluster request must be a JSON object");
  if (!req.contains("k") || !req["k"].is_number_integer()) return error(422, "k must be an integer");
  const auto k = req["k"].get<long long>();
  std::uint64_t seed = 0;
  bool strip = true;
  if (req.contains("seed")) {
    if (!req["seed"].is_number_integer()) return error(422, "seed must be an integer");
    seed = req["seed"].get<std::uint64_t>();
  }
  if (req.contains("strip_floor")) {
    if (!req["strip_floor"].is_boolean()) return error(422, "strip_floor must be a boolean");
    strip = req["strip_floor"].get<bool>();
  }

  std::unique_lock lock(s->mu);
  if (k < 1 || k > static_cast<long long>(s->scene.size()))
    return error(422, "k = " + std::to_string(k) + " is outside [1, " + std::to_string(s->scene.size()) + "]");
  ClusterSet cs;
  try {
    cs = cluster_scene(s->scene, static_cast<int>(k), seed, strip);
    embed_clusters(cs, s->scene, model_, opt_.n_points);
  } catch (const ConfigError& e) {
    return error(422, e.what());
  }
  json clusters = json::array();
  std::size_t kept = 0;
  for (std::size_t c = 0; c < cs.members.size(); ++c) {
    Vec3 lo = s->scene.points[cs.members[c].front()], hi = lo;
    for (auto i : cs.members[c]) {
      const Vec3& p = s->scene.points[i];
      lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
      hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
    }
    kept += cs.members[c].size();
    clusters.push_back({{"index", c},
                        {"size", cs.members[c].size()},
                        {"centroid", vec(cs.centroids[c])},
                        {"bbox", {{"min", vec(lo)}, {"max", vec(hi)}}}});
  }
  s->clusters = std::move(cs);
  return reply(200, {{"scene_id", id}, {"k", k}, {"n_clustered", kept}, {"clusters", clusters}});
}

HttpReply SceneService::query(const std::string& id, std::string_view body) {
  auto s = find(id);
  if (!s) return error(404, "unknown scene " + id);
  json req;
  try {
    req = json::parse(body);
  } catch (const json::parse_error& e) {
    return reply(400, {{"error", e.what()}, {"offset", e.byte}});
  }
  if (!req.is_object() || !req.contains("text") || !req["text"].is_string())
    return error(422, "request needs a string \"text\"");
  const auto text = req["text"].get<std::string>();
  std::shared_lock lock(s->mu);
  if (!s->clusters) return error(409, "scene " + id + " has not been clustered");
  std::vector<ClusterScore> ranked;
  try {
    ranked = scene_query(*s->clusters, model_, text);
  } catch (const ConfigError& e) {
    return error(422, e.what());
  }
  json results = json::array();
  for (const auto& r : ranked) results.push_back({{"cluster", r.cluster}, {"score", r.score}, {"rank", r.rank}});
  return reply(200, {{"query", text}, {"results", results}});
}

HttpReply SceneService::points(const std::string& id, const std::optional<std::string>& cluster, bool coords) {
  auto s = find(id);
  if (!s) return error(404, "unknown scene " + id);
  std::shared_lock lock(s->mu);
  if (!s->clusters) return error(409, "scene " + id + " has not been clustered");
  if (!cluster) return error(422, "missing ?cluster=");
  std::size_t used = 0;
  long long c = -1;
  try {
    c = std::stoll(*cluster, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != cluster->size() || c < 0 || c >= s->clusters->k)
    return error(422, "cluster \"" + *cluster + "\" is not in [0, " + std::to_string(s->clusters->k) + ")");
  const auto& mem = s->clusters->members[static_cast<std::size_t>(c)];
  json out = json::array();
  for (auto i : mem) {
    if (coords) out.push_back(vec(s->scene.points[i]));
    else out.push_back(i);
  }
  return reply(200, out);
}

HttpReply SceneService::health() const {
  std::shared_lock lock(store_mu_);
  return reply(200, {{"status", "ok"}, {"point_encoder", model_.point_kind}, {"sessions", sessions_.size()}});
}

void SceneService::mount(httplib::Server& server) {
  auto send = [](httplib::Response& res, const HttpReply& r) {
    res.status = r.status;
    res.set_content(r.body, "application/json; charset=utf-8");
  };
  server.Get("/healthz", [this, send](const httplib::Request&, httplib::Response& res) { send(res, health()); });
  server.Post("/scenes", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, upload(req.body));
  });
  server.Post(R"(/scenes/([^/]+)/cluster)", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, cluster(req.matches[1], req.body));
  });
  server.Post(R"(/scenes/([^/]+)/query)", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, query(req.matches[1], req.body));
  });
  server.Get(R"(/scenes/([^/]+)/points)", [this, send](const httplib::Request& req, httplib::Response& res) {
    std::optional<std::string> c;
    if (req.has_param("cluster")) c = req.get_param_value("cluster");
    const bool coords = req.has_param("coords") && req.get_param_value("coords") == "1";
    send(res, points(req.matches[1], c, coords));
  });
  server.set_exception_handler([send](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      send(res, error(500, e.what()));
    }
  });
}

void run_server(SceneService& service, const std::string& host, int port) {
  httplib::Server server;
  service.mount(server);
  if (!server.listen(host, port)) throw IoError("cannot listen on " + host + ":" + std::to_string(port));
}

}  // namespace cg3d
