#include "vrw/service.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "vrw/errors.hpp"
#include "vrw/io.hpp"

namespace vrw {

using json = nlohmann::json;

namespace {

ApiResponse reply(int status, const json& body) { return {status, body.dump(), "application/json"}; }

ApiResponse error_reply(int status, const std::string& message, const std::string& field = "") {
  json body = {{"error", message}};
  if (!field.empty()) body["field"] = field;
  return reply(status, body);
}

ApiResponse unknown_session(const std::string& id) { return error_reply(404, "unknown session '" + id + "'"); }

// Thrown while decoding a request body; becomes a 400 with the offending field.
struct BadField {
  std::string field;
  std::string message;
};

int int_field(const json& obj, const char* key, const std::string& path, bool required = true, int fallback = 0) {
  if (!obj.contains(key)) {
    if (required) throw BadField{path + "." + key, "required"};
    return fallback;
  }
  const auto& v = obj.at(key);
  if (!v.is_number_integer()) throw BadField{path + "." + key, "expected an integer"};
  const auto x = v.get<std::int64_t>();
  if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
    throw BadField{path + "." + key, "integer out of range"};
  }
  return int(x);
}

void only_keys(const json& obj, std::initializer_list<const char*> keys, const std::string& path) {
  if (!obj.is_object()) throw BadField{path, "expected an object"};
  for (const auto& item : obj.items()) {
    if (std::none_of(keys.begin(), keys.end(), [&](const char* k) { return item.key() == k; })) {
      throw BadField{path.empty() ? item.key() : path + "." + item.key(), "unknown key"};
    }
  }
}

int pixel_of(const json& obj, const std::string& path, const PixelGrid& grid) {
  const int x = int_field(obj, "x", path);
  const int y = int_field(obj, "y", path);
  if (x < 0 || x >= grid.width()) throw BadField{path + ".x", "outside the image"};
  if (y < 0 || y >= grid.height()) throw BadField{path + ".y", "outside the image"};
  return grid.index(x, y);
}

std::string raster_bytes(const Raster& r) {
  std::ostringstream out;
  write_raster(out, r);
  return out.str();
}

std::string probs_ref(long revision) { return "probs-" + std::to_string(revision); }
std::string entropy_ref(long revision) { return "entropy-" + std::to_string(revision); }

}  // namespace

AnnotationService::AnnotationService(ServiceConfig config, Clock clock)
    : config_(std::move(config)), clock_(std::move(clock)) {
  if (!clock_) clock_ = [] { return std::chrono::steady_clock::now(); };
  validate(config_.transition);
  validate(config_.solver);
  validate(config_.vesselness);
  if (config_.model) validate(config_.model->transition);
  std::random_device rd;
  salt_ = (std::uint64_t(rd()) << 32) ^ rd();
}

std::string AnnotationService::new_id() {
  // splitmix64 of a counter: unique and not guessable from the previous id
  std::uint64_t z = (++counter_) * 0x9e3779b97f4a7c15ull + salt_;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  z ^= z >> 31;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(z));
  return buf;
}

std::shared_ptr<Session> AnnotationService::find(const std::string& id) {
  evict_idle();
  std::lock_guard<std::mutex> lock(store_mutex_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) return nullptr;
  it->second->last_access = clock_();
  return it->second;
}

int AnnotationService::evict_idle() {
  const auto now = clock_();
  std::lock_guard<std::mutex> lock(store_mutex_);
  int n = 0;
  for (auto it = sessions_.begin(); it != sessions_.end();) {
    if (now - it->second->last_access > config_.idle_timeout) {
      it = sessions_.erase(it);
      ++n;
    } else {
      ++it;
    }
  }
  return n;
}

std::size_t AnnotationService::session_count() const {
  std::lock_guard<std::mutex> lock(store_mutex_);
  return sessions_.size();
}

ApiResponse AnnotationService::create_session(const std::string& body, const std::string& num_labels) {
  evict_idle();
  auto s = std::make_shared<Session>();
  try {
    if (!num_labels.empty()) {
      std::size_t used = 0;
      int l = 0;
      try {
        l = std::stoi(num_labels, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != num_labels.size() || l < 2 || l > 255) {
        return error_reply(400, "numLabels must be an integer in [2, 255]", "numLabels");
      }
      s->num_labels = l;
    }
    std::istringstream in(body);
    if (body.size() >= 2 && body[0] == 'P' && body[1] == '5') {
      s->image = read_pgm(in);
    } else {
      s->image = image_from_raster(read_raster(in));
    }
  } catch (const ValidationError& e) {
    return error_reply(400, std::string("image upload: ") + e.what(), "body");
  }
  if (s->image.size() == 0) return error_reply(400, "image upload: empty image", "body");

  s->grid = PixelGrid(s->image.width, s->image.height, config_.connectivity);
  Image orientation;
  const FeatureStack features = compute_features(s->image, config_.vesselness, &orientation);
  const CueParams cue_params = config_.model ? config_.model->cues : CueParams::classical(features.channels);
  if (cue_params.channels() != features.channels) {
    return error_reply(500, "checkpoint cue head does not match the feature stack");
  }
  s->cues = cue_head_forward(features, cue_params, orientation);
  s->transition = config_.model ? config_.model->transition : config_.transition;
  s->labels.num_labels = s->num_labels;
  s->last_access = clock_();
  {
    std::lock_guard<std::mutex> lock(store_mutex_);
    s->id = new_id();
    sessions_[s->id] = s;
  }
  return reply(201, {{"sessionId", s->id},
                     {"width", s->image.width},
                     {"height", s->image.height},
                     {"numLabels", s->num_labels}});
}

ApiResponse AnnotationService::update_labels(const std::string& id, const std::string& body) {
  const auto s = find(id);
  if (!s) return unknown_session(id);
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::parse_error& e) {
    return error_reply(400, std::string("malformed JSON: ") + e.what(), "body");
  }
  std::vector<LabelEntry> additions;
  std::vector<int> removals;
  try {
    only_keys(doc, {"add", "remove"}, "");
    if (doc.contains("add")) {
      const auto& add = doc.at("add");
      if (!add.is_array()) throw BadField{"add", "expected an array"};
      for (std::size_t i = 0; i < add.size(); ++i) {
        const std::string path = "add[" + std::to_string(i) + "]";
        const auto& e = add[i];
        only_keys(e, {"x", "y", "label", "kind"}, path);
        const int pixel = pixel_of(e, path, s->grid);
        const int label = int_field(e, "label", path);
        if (label < 0 || label >= s->num_labels) throw BadField{path + ".label", "outside [0, numLabels)"};
        LabelKind kind = LabelKind::Scribble;
        if (e.contains("kind")) {
          if (!e.at("kind").is_string()) throw BadField{path + ".kind", "expected a string"};
          try {
            kind = label_kind_from_string(e.at("kind").get<std::string>().c_str());
          } catch (const ValidationError&) {
            throw BadField{path + ".kind", "expected seed, scribble or centerline"};
          }
        }
        additions.push_back({pixel, label, kind});
      }
    }
    if (doc.contains("remove")) {
      const auto& rem = doc.at("remove");
      if (!rem.is_array()) throw BadField{"remove", "expected an array"};
      for (std::size_t i = 0; i < rem.size(); ++i) {
        const std::string path = "remove[" + std::to_string(i) + "]";
        only_keys(rem[i], {"x", "y"}, path);
        removals.push_back(pixel_of(rem[i], path, s->grid));
      }
    }
  } catch (const BadField& b) {
    return error_reply(400, b.field + ": " + b.message, b.field);
  }

  std::lock_guard<std::mutex> lock(s->mutex);
  SparseLabels next = s->labels;
  std::sort(removals.begin(), removals.end());
  std::erase_if(next.entries, [&](const LabelEntry& e) {
    return std::binary_search(removals.begin(), removals.end(), e.pixel);
  });
  next.entries.insert(next.entries.end(), additions.begin(), additions.end());
  try {
    validate_labels(s->grid, next);
  } catch (const ValidationError& e) {
    return error_reply(400, e.what(), "add");
  }
  const bool changed = !additions.empty() || !removals.empty();
  if (changed) {
    s->labels = std::move(next);
    ++s->revision;
  }
  return reply(200, {{"revision", s->revision}, {"labelCount", s->labels.entries.size()}});
}

ApiResponse AnnotationService::propagate(const std::string& id) {
  const auto s = find(id);
  if (!s) return unknown_session(id);
  SparseLabels labels;
  long revision = 0;
  {
    std::lock_guard<std::mutex> lock(s->mutex);
    labels = s->labels;
    revision = s->revision;
  }
  if (labels.entries.empty()) return error_reply(409, "no absorbing states: add at least one label first");
  std::shared_ptr<const PropagatedField> field;
  try {
    field = std::make_shared<const PropagatedField>(
        vrw::propagate(s->grid, s->cues, s->transition, labels, config_.solver));
  } catch (const SolverError& e) {
    return error_reply(500, std::string("solver failure: ") + e.what());
  } catch (const ValidationError& e) {
    return error_reply(400, e.what(), "labels");
  }
  int reachable = 0;
  for (char r : field->reachable) reachable += r ? 1 : 0;
  {
    std::lock_guard<std::mutex> lock(s->mutex);
    // a slower solve of an older revision never replaces a newer result
    if (revision >= s->field_revision) {
      s->field = field;
      s->field_revision = revision;
    }
  }
  return reply(200, {{"revision", revision},
                     {"probsRef", probs_ref(revision)},
                     {"entropyRef", entropy_ref(revision)},
                     {"reachable", reachable},
                     {"unreachable", field->size() - reachable}});
}

ApiResponse AnnotationService::raster(const std::string& id, const std::string& ref) {
  const auto s = find(id);
  if (!s) return unknown_session(id);
  std::shared_ptr<const PropagatedField> field;
  long revision = 0;
  {
    std::lock_guard<std::mutex> lock(s->mutex);
    field = s->field;
    revision = s->field_revision;
  }
  if (!field) return error_reply(404, "no propagation result yet");
  if (ref == probs_ref(revision)) return {200, raster_bytes(probability_raster(*field)), "application/octet-stream"};
  if (ref == entropy_ref(revision)) return {200, raster_bytes(entropy_raster(*field)), "application/octet-stream"};
  return error_reply(404, "unknown raster ref '" + ref + "'", "ref");
}

ApiResponse AnnotationService::suggest(const std::string& id, const std::string& k_text) {
  const auto s = find(id);
  if (!s) return unknown_session(id);
  int k = config_.default_suggestions;
  if (!k_text.empty()) {
    std::size_t used = 0;
    try {
      k = std::stoi(k_text, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != k_text.size() || k < 1) return error_reply(400, "k must be a positive integer", "k");
    k = std::min(k, config_.max_suggestions);
  }
  std::shared_ptr<const PropagatedField> field;
  long revision = 0;
  std::vector<char> labeled(s->grid.size(), 0);
  {
    std::lock_guard<std::mutex> lock(s->mutex);
    field = s->field;
    revision = s->field_revision;
    for (const auto& e : s->labels.entries) labeled[e.pixel] = 1;
  }
  if (!field) return error_reply(409, "no propagation result yet: call propagate first");
  std::vector<int> order;
  order.reserve(field->size());
  for (int p = 0; p < field->size(); ++p) {
    if (!labeled[p]) order.push_back(p);
  }
  const std::size_t take = std::min<std::size_t>(k, order.size());
  const auto& h = field->entropy;
  std::partial_sort(order.begin(), order.begin() + take, order.end(),
                    [&](int a, int b) { return h[a] != h[b] ? h[a] > h[b] : a < b; });
  json pixels = json::array();
  for (std::size_t i = 0; i < take; ++i) {
    const int p = order[i];
    pixels.push_back({{"x", p % s->grid.width()}, {"y", p / s->grid.width()}, {"entropy", h[p]}});
  }
  return reply(200, {{"revision", revision}, {"pixels", pixels}});
}

ApiResponse AnnotationService::remove_session(const std::string& id) {
  std::lock_guard<std::mutex> lock(store_mutex_);
  if (sessions_.erase(id) == 0) return unknown_session(id);
  return reply(200, {{"deleted", id}});
}

void AnnotationService::mount(httplib::Server& server, const std::string& static_dir) {
  server.set_default_headers({{"Access-Control-Allow-Origin", config_.cors_origin},
                              {"Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type"}});
  auto send = [](httplib::Response& res, const ApiResponse& r) {
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  server.Post("/sessions", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, create_session(req.body, req.get_param_value("numLabels")));
  });
  server.Post("/sessions/:id/labels", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, update_labels(req.path_params.at("id"), req.body));
  });
  server.Post("/sessions/:id/propagate", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, propagate(req.path_params.at("id")));
  });
  server.Get("/sessions/:id/raster/:ref", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, raster(req.path_params.at("id"), req.path_params.at("ref")));
  });
  server.Get("/sessions/:id/suggest", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, suggest(req.path_params.at("id"), req.get_param_value("k")));
  });
  server.Delete("/sessions/:id", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, remove_session(req.path_params.at("id")));
  });
  server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string what = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    res.status = 500;
    res.set_content(json{{"error", what}}.dump(), "application/json");
  });
  if (!static_dir.empty() && !server.set_mount_point("/", static_dir)) {
    throw ArgumentError("static directory '" + static_dir + "' does not exist");
  }
}

int run_service(AnnotationService& service, const std::string& host, int port, const std::string& static_dir) {
  httplib::Server server;
  service.mount(server, static_dir);
  const int bound = port == 0 ? server.bind_to_any_port(host) : (server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw ArgumentError("cannot bind " + host + ":" + std::to_string(port));
  std::fprintf(stderr, "listening on http://%s:%d\n", host.c_str(), bound);

  std::mutex m;
  std::condition_variable cv;
  bool done = false;
  std::thread sweeper([&] {
    std::unique_lock<std::mutex> lock(m);
    while (!cv.wait_for(lock, std::chrono::seconds(60), [&] { return done; })) service.evict_idle();
  });
  const bool ok = server.listen_after_bind();
  {
    std::lock_guard<std::mutex> lock(m);
    done = true;
  }
  cv.notify_all();
  sweeper.join();
  return ok ? 0 : 1;
}

}  // namespace vrw
