#pragma once

#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>

#include "cg3d/inference/inference.hpp"

namespace httplib {
class Server;
}

namespace cg3d {

struct ServiceOptions {
  std::size_t max_points = 2'000'000;
  int n_points = 256;  // per encoded cluster
};

struct HttpReply {
  int status = 200;
  std::string body;  // JSON
};

// Scene sessions over one loaded model. Handlers are plain functions of the
// request pieces so they can be exercised without a socket; mount() wires
// them to routes.
class SceneService {
 public:
  SceneService(Model<float> model, ServiceOptions opt = {});

  HttpReply upload(std::string_view body);
  HttpReply cluster(const std::string& id, std::string_view body);
  HttpReply query(const std::string& id, std::string_view body);
  HttpReply points(const std::string& id, const std::optional<std::string>& cluster, bool coords);
  HttpReply health() const;

  void mount(httplib::Server& server);

 private:
  struct Session {
    std::shared_mutex mu;  // exclusive for cluster, shared for reads
    SceneCloud scene;
    std::optional<ClusterSet> clusters;
  };
  std::shared_ptr<Session> find(const std::string& id) const;

  Model<float> model_;
  ServiceOptions opt_;
  mutable std::shared_mutex store_mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::atomic<std::uint64_t> next_id_{1};
};

// Blocks serving on host:port until the server stops.
void run_server(SceneService& service, const std::string& host, int port);

}  // namespace cg3d
