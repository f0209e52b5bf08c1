#pragma once

#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "vrw/cues.hpp"
#include "vrw/grid.hpp"
#include "vrw/image.hpp"
#include "vrw/propagate.hpp"
#include "vrw/solver.hpp"
#include "vrw/train.hpp"

namespace httplib {
class Server;
}

namespace vrw {

struct ServiceConfig {
  TransitionParams transition;  // used when no checkpoint is loaded
  SolverConfig solver;
  VesselnessConfig vesselness;
  Connectivity connectivity = Connectivity::Four;
  std::optional<ModelState> model;  // cue head and transition parameters from a checkpoint
  std::chrono::seconds idle_timeout{30 * 60};
  int default_suggestions = 10;
  int max_suggestions = 1000;
  std::string cors_origin = "*";
};

// Reply of one API call, independent of the transport.
struct ApiResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

struct Session {
  std::string id;
  Image image;
  PixelGrid grid{1, 1};
  CueMaps cues;
  TransitionParams transition;
  int num_labels = 2;
  std::chrono::steady_clock::time_point last_access;  // guarded by the store lock

  std::mutex mutex;  // guards everything below
  SparseLabels labels;
  long revision = 0;
  std::shared_ptr<const PropagatedField> field;  // latest result
  long field_revision = -1;
};

// In-memory session store plus the request handlers. Handlers take the raw
// request pieces and never throw.
class AnnotationService {
 public:
  using Clock = std::function<std::chrono::steady_clock::time_point()>;

  explicit AnnotationService(ServiceConfig config, Clock clock = {});

  // POST /sessions, body: VRW1 raster or P5 PGM. `num_labels` from the query string.
  ApiResponse create_session(const std::string& body, const std::string& num_labels = "");
  // POST /sessions/{id}/labels, body: {"add": [{x, y, label, kind}], "remove": [{x, y}]}.
  ApiResponse update_labels(const std::string& id, const std::string& body);
  // POST /sessions/{id}/propagate
  ApiResponse propagate(const std::string& id);
  // GET /sessions/{id}/raster/{ref}
  ApiResponse raster(const std::string& id, const std::string& ref);
  // GET /sessions/{id}/suggest?k=
  ApiResponse suggest(const std::string& id, const std::string& k = "");
  // DELETE /sessions/{id}
  ApiResponse remove_session(const std::string& id);

  // Drops sessions idle for longer than the timeout; returns how many.
  int evict_idle();
  std::size_t session_count() const;

  // Routes, CORS headers and, when `static_dir` is non-empty, static files.
  void mount(httplib::Server& server, const std::string& static_dir = "");

 private:
  std::shared_ptr<Session> find(const std::string& id);
  std::string new_id();

  ServiceConfig config_;
  Clock clock_;
  mutable std::mutex store_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t counter_ = 0;
  std::uint64_t salt_ = 0;
};

// Builds the server (routes mounted), binds and blocks until stopped.
int run_service(AnnotationService& service, const std::string& host, int port, const std::string& static_dir);

}  // namespace vrw
