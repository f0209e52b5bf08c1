#include "vrw/io.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "vrw/errors.hpp"

namespace vrw {

using json = nlohmann::json;

namespace {

constexpr char kRasterMagic[4] = {'V', 'R', 'W', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff), char((v >> 24) & 0xff)};
  out.write(b, 4);
}

std::uint32_t get_u32(const unsigned char* b) {
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  return out;
}

json parse_json(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string(what) + ": " + e.what());
  }
}

// Reads the keys of one JSON object, remembering which were consumed so the rest
// can be reported as unknown.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw FormatError(where() + "expected an object");
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  void number(const char* key, double& out) {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_number()) throw FormatError(where(key) + "expected a number");
    out = v.get<double>();
  }
  void integer(const char* key, int& out) {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_number_integer()) throw FormatError(where(key) + "expected an integer");
    const auto x = v.get<std::int64_t>();
    if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
      throw FormatError(where(key) + "integer out of range");
    }
    out = int(x);
  }
  void unsigned64(const char* key, std::uint64_t& out) {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
      throw FormatError(where(key) + "expected a non-negative integer");
    }
    out = v.get<std::uint64_t>();
  }
  void boolean(const char* key, bool& out) {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_boolean()) throw FormatError(where(key) + "expected true or false");
    out = v.get<bool>();
  }
  void text(const char* key, std::string& out) {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_string()) throw FormatError(where(key) + "expected a string");
    out = v.get<std::string>();
  }
  void numbers(const char* key, std::vector<double>& out) {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_array()) throw FormatError(where(key) + "expected an array of numbers");
    out.clear();
    for (const auto& e : v) {
      if (!e.is_number()) throw FormatError(where(key) + "expected an array of numbers");
      out.push_back(e.get<double>());
    }
  }
  template <class E, class Parse>
  void enumeration(const char* key, E& out, Parse parse) {
    std::string s;
    text(key, s);
    if (!j_.contains(key)) return;
    try {
      out = parse(s);
    } catch (const ValidationError&) {
      throw FormatError(where(key) + "unknown value '" + s + "'");
    }
  }
  // Nested object, or nullptr when absent.
  const json* object(const char* key) {
    if (!has(key)) return nullptr;
    return &j_.at(key);
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw FormatError(where(item.key().c_str()) + "unknown key");
    }
  }

 private:
  std::string where(const char* key = nullptr) const {
    std::string p = path_;
    if (key) p = p.empty() ? key : p + "." + key;
    return p.empty() ? std::string() : p + ": ";
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class T>
T parse_or_throw(const std::string& s, std::initializer_list<std::pair<const char*, T>> table) {
  for (const auto& [name, value] : table) {
    if (s == name) return value;
  }
  throw ValidationError("unknown value " + s);
}

template <class T>
const char* name_of(T value, std::initializer_list<std::pair<const char*, T>> table) {
  for (const auto& [name, v] : table) {
    if (v == value) return name;
  }
  return "";
}

const std::initializer_list<std::pair<const char*, CueSide>> kCueSides = {{"source", CueSide::Source},
                                                                          {"target", CueSide::Target}};
const std::initializer_list<std::pair<const char*, SolverMethod>> kMethods = {
    {"auto", SolverMethod::Auto},         {"cg", SolverMethod::ConjugateGradient}, {"cgnr", SolverMethod::CGNR},
    {"bicgstab", SolverMethod::BiCGSTAB}, {"direct", SolverMethod::DirectLU}};
const std::initializer_list<std::pair<const char*, Preconditioner>> kPreconditioners = {
    {"none", Preconditioner::None}, {"jacobi", Preconditioner::Jacobi}};
const std::initializer_list<std::pair<const char*, Optimizer>> kOptimizers = {{"sgd", Optimizer::SGD},
                                                                              {"adam", Optimizer::Adam}};
const std::initializer_list<std::pair<const char*, VesselPolarity>> kPolarities = {
    {"dark", VesselPolarity::Dark}, {"bright", VesselPolarity::Bright}, {"both", VesselPolarity::Both}};

void read_transition(Fields& f, TransitionParams& t) {
  f.number("lambda", t.lambda);
  f.number("mu", t.mu);
  f.enumeration("cueSide", t.cue_side, [](const std::string& s) { return parse_or_throw(s, kCueSides); });
  f.boolean("useOrientation", t.use_orientation);
  f.finish();
}

json write_transition(const TransitionParams& t) {
  return {{"lambda", t.lambda},
          {"mu", t.mu},
          {"cueSide", name_of(t.cue_side, kCueSides)},
          {"useOrientation", t.use_orientation}};
}

void read_ablation(Fields& f, Ablation& a) {
  f.boolean("freezeCues", a.freeze_cues);
  f.boolean("gammaZero", a.gamma_zero);
  f.boolean("alphaZero", a.alpha_zero);
  f.boolean("constantVesselness", a.constant_vesselness);
  f.finish();
}

json write_ablation(const Ablation& a) {
  return {{"freezeCues", a.freeze_cues},
          {"gammaZero", a.gamma_zero},
          {"alphaZero", a.alpha_zero},
          {"constantVesselness", a.constant_vesselness}};
}

json write_cues(const CueParams& c) {
  return {{"boundaryWeights", c.boundary_weights},
          {"boundaryBias", c.boundary_bias},
          {"vesselWeights", c.vessel_weights},
          {"vesselBias", c.vessel_bias}};
}

CueParams read_cues(const json& j, const std::string& path) {
  Fields f(j, path);
  CueParams c;
  f.numbers("boundaryWeights", c.boundary_weights);
  f.number("boundaryBias", c.boundary_bias);
  f.numbers("vesselWeights", c.vessel_weights);
  f.number("vesselBias", c.vessel_bias);
  f.finish();
  if (c.boundary_weights.size() != c.vessel_weights.size() || c.boundary_weights.empty()) {
    throw FormatError(path + ": boundary and vessel weight counts must match and be nonzero");
  }
  return c;
}

json write_predictor(const PredictorParams& p) {
  return {{"channels", p.channels}, {"numLabels", p.num_labels}, {"hidden", p.hidden},
          {"smoothing", p.smoothing}, {"w1", p.w1},               {"b1", p.b1},
          {"w", p.w},                 {"b", p.b},                 {"smooth", p.smooth}};
}

PredictorParams read_predictor(const json& j, const std::string& path) {
  Fields f(j, path);
  PredictorParams p;
  f.integer("channels", p.channels);
  f.integer("numLabels", p.num_labels);
  f.integer("hidden", p.hidden);
  f.boolean("smoothing", p.smoothing);
  f.numbers("w1", p.w1);
  f.numbers("b1", p.b1);
  f.numbers("w", p.w);
  f.numbers("b", p.b);
  f.numbers("smooth", p.smooth);
  f.finish();
  try {
    validate(p);
  } catch (const ValidationError& e) {
    throw FormatError(path + ": " + e.what());
  }
  return p;
}

json summary_json(const MetricSummary& s) { return {{"mean", s.mean}, {"sd", s.sd}}; }

}  // namespace

// ---------------------------------------------------------------------------
// rasters

void write_raster(std::ostream& out, const Raster& r) {
  if (r.data.size() != r.pixels() * r.channels) throw ArgumentError("write_raster: data size mismatch");
  out.write(kRasterMagic, 4);
  put_u32(out, r.width);
  put_u32(out, r.height);
  put_u32(out, r.channels);
  std::vector<char> buf(r.data.size() * 4);
  for (std::size_t i = 0; i < r.data.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(r.data[i]);
    for (int k = 0; k < 4; ++k) buf[4 * i + k] = char((bits >> (8 * k)) & 0xff);
  }
  out.write(buf.data(), std::streamsize(buf.size()));
  if (!out) throw FormatError("write_raster: stream error");
}

Raster read_raster(std::istream& in) {
  unsigned char head[16];
  if (!in.read(reinterpret_cast<char*>(head), 16)) throw FormatError("raster: truncated header");
  if (!std::equal(head, head + 4, kRasterMagic)) throw FormatError("raster: bad magic, expected VRW1");
  Raster r;
  r.width = get_u32(head + 4);
  r.height = get_u32(head + 8);
  r.channels = get_u32(head + 12);
  const std::uint64_t count = std::uint64_t(r.width) * r.height * r.channels;
  if (count > (std::uint64_t(1) << 32)) throw FormatError("raster: implausible dimensions");
  std::vector<unsigned char> buf(count * 4);
  if (!in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()))) {
    throw FormatError("raster: truncated data");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("raster: trailing bytes after data");
  r.data.resize(count);
  for (std::size_t i = 0; i < count; ++i) r.data[i] = std::bit_cast<float>(get_u32(&buf[4 * i]));
  return r;
}

void write_raster(const std::filesystem::path& path, const Raster& raster) {
  auto out = open_out(path);
  write_raster(out, raster);
}

Raster read_raster(const std::filesystem::path& path) {
  auto in = open_in(path);
  try {
    return read_raster(in);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Raster raster_from_image(const Image& image) {
  Raster r{std::uint32_t(image.width), std::uint32_t(image.height), 1, {}};
  r.data.assign(image.data.begin(), image.data.end());
  return r;
}

Image image_from_raster(const Raster& r) {
  if (r.channels != 1) throw FormatError("expected a single-channel raster, got " + std::to_string(r.channels));
  Image img(int(r.width), int(r.height));
  for (std::size_t i = 0; i < r.data.size(); ++i) img.data[i] = r.data[i];
  return img;
}

Raster probability_raster(const PropagatedField& f) {
  Raster r{std::uint32_t(f.width), std::uint32_t(f.height), std::uint32_t(f.num_labels), {}};
  r.data.assign(f.probs.begin(), f.probs.end());
  return r;
}

Raster entropy_raster(const PropagatedField& f) {
  Raster r{std::uint32_t(f.width), std::uint32_t(f.height), 1, {}};
  r.data.assign(f.entropy.begin(), f.entropy.end());
  return r;
}

Raster field_raster(const PropagatedField& f) {
  const int c = f.num_labels + 1;
  Raster r{std::uint32_t(f.width), std::uint32_t(f.height), std::uint32_t(c), {}};
  r.data.resize(std::size_t(f.size()) * c);
  for (int x = 0; x < f.size(); ++x) {
    for (int l = 0; l < f.num_labels; ++l) r.data[std::size_t(x) * c + l] = float(f.p(x, l));
    r.data[std::size_t(x) * c + f.num_labels] = float(f.entropy[x]);
  }
  return r;
}

Raster mask_raster(const Mask& mask, int width, int height) {
  if (mask.size() != std::size_t(width) * height) throw ArgumentError("mask_raster: size mismatch");
  Raster r{std::uint32_t(width), std::uint32_t(height), 1, {}};
  r.data.resize(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) r.data[i] = mask[i] ? 1.0f : 0.0f;
  return r;
}

// ---------------------------------------------------------------------------
// PGM

Image read_pgm(std::istream& in) {
  auto token = [&]() {
    std::string t;
    int c;
    while ((c = in.get()) != EOF) {
      if (c == '#') {
        while ((c = in.get()) != EOF && c != '\n') {
        }
        continue;
      }
      if (std::isspace(c)) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(char(c));
    }
    return t;
  };
  if (token() != "P5") throw FormatError("pgm: expected P5 header");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw FormatError("pgm: malformed header");
  }
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) throw FormatError("pgm: invalid header values");
  const int bytes = maxval < 256 ? 1 : 2;
  std::vector<unsigned char> buf(std::size_t(w) * h * bytes);
  if (!in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()))) {
    throw FormatError("pgm: truncated data");
  }
  Image img(w, h);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const int v = bytes == 1 ? buf[i] : (buf[2 * i] << 8) | buf[2 * i + 1];
    if (v > maxval) throw FormatError("pgm: sample above maxval");
    img.data[i] = double(v) / maxval;
  }
  return img;
}

Image read_pgm(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_pgm(in);
}

void write_pgm(const std::filesystem::path& path, const Image& image) {
  auto out = open_out(path);
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  std::vector<char> buf(image.data.size());
  for (std::size_t i = 0; i < buf.size(); ++i) {
    buf[i] = char(static_cast<unsigned char>(std::lround(std::clamp(image.data[i], 0.0, 1.0) * 255.0)));
  }
  out.write(buf.data(), std::streamsize(buf.size()));
}

Image read_image(const std::filesystem::path& path) {
  auto in = open_in(path);
  char magic[2] = {0, 0};
  in.read(magic, 2);
  in.seekg(0);
  if (magic[0] == 'P' && magic[1] == '5') return read_pgm(in);
  try {
    return image_from_raster(read_raster(in));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Mask read_mask(const std::filesystem::path& path, int* width, int* height) {
  const Image img = read_image(path);
  if (width) *width = img.width;
  if (height) *height = img.height;
  Mask m(img.data.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = img.data[i] != 0.0 ? 1 : 0;
  return m;
}

// ---------------------------------------------------------------------------
// labels

std::string labels_to_json(const SparseLabels& labels, int width) {
  json entries = json::array();
  for (const auto& e : labels.entries) {
    entries.push_back(
        {{"x", e.pixel % width}, {"y", e.pixel / width}, {"label", e.label}, {"kind", to_string(e.kind)}});
  }
  return json{{"numLabels", labels.num_labels}, {"entries", entries}}.dump(1);
}

SparseLabels labels_from_json(const std::string& text, int width, int height) {
  const json j = parse_json(text, "labels");
  Fields f(j, "");
  SparseLabels labels;
  f.integer("numLabels", labels.num_labels);
  const json* entries = f.object("entries");
  f.finish();
  if (!entries || !entries->is_array()) throw FormatError("entries: expected an array");
  for (std::size_t i = 0; i < entries->size(); ++i) {
    const std::string path = "entries[" + std::to_string(i) + "]";
    Fields e((*entries)[i], path);
    int x = -1, y = -1, label = -1;
    std::string kind = "scribble";
    if (!e.has("x") || !e.has("y") || !e.has("label")) throw FormatError(path + ": x, y and label are required");
    e.integer("x", x);
    e.integer("y", y);
    e.integer("label", label);
    e.text("kind", kind);
    e.finish();
    if (x < 0 || x >= width || y < 0 || y >= height) {
      throw FormatError(path + ": pixel (" + std::to_string(x) + ", " + std::to_string(y) + ") outside the " +
                        std::to_string(width) + "x" + std::to_string(height) + " grid");
    }
    LabelKind k;
    try {
      k = label_kind_from_string(kind.c_str());
    } catch (const std::exception&) {
      throw FormatError(path + ".kind: unknown value '" + kind + "'");
    }
    labels.entries.push_back({y * width + x, label, k});
  }
  validate_labels(PixelGrid(width, height), labels);
  return labels;
}

void write_labels(const std::filesystem::path& path, const SparseLabels& labels, int width) {
  write_text_file(path, labels_to_json(labels, width) + "\n");
}

SparseLabels read_labels(const std::filesystem::path& path, int width, int height) {
  return labels_from_json(read_text_file(path), width, height);
}

// ---------------------------------------------------------------------------
// run config

void validate(const RunConfig& c) {
  validate(c.transition);
  validate(c.loss);
  validate(c.solver);
  validate(c.train);
  validate(c.predictor);
  validate(c.vesselness);
}

RunConfig run_config_from_json(const std::string& text) {
  const json j = parse_json(text, "config");
  RunConfig c;
  Fields root(j, "");
  if (const json* s = root.object("transition")) {
    Fields f(*s, "transition");
    read_transition(f, c.transition);
  }
  if (const json* s = root.object("loss")) {
    Fields f(*s, "loss");
    auto& l = c.loss;
    f.number("alpha", l.alpha);
    f.number("beta", l.beta);
    f.number("gamma", l.gamma);
    f.number("etaSkel", l.eta_skel);
    f.number("etaGeo", l.eta_geo);
    f.integer("vesselLabel", l.vessel_label);
    f.number("softMinTemperature", l.soft_min_temperature);
    f.number("nearRadius", l.near_radius);
    f.integer("skeletonIterations", l.skeleton_iterations);
    f.number("geodesicEpsilon", l.geodesic_epsilon);
    f.integer("geodesicSweeps", l.geodesic_sweeps);
    f.boolean("stopGradientWeights", l.stop_gradient_weights);
    f.boolean("entropyPerPixel", l.entropy_per_pixel);
    f.finish();
  }
  if (const json* s = root.object("solver")) {
    Fields f(*s, "solver");
    auto& v = c.solver;
    f.enumeration("method", v.method, [](const std::string& x) { return parse_or_throw(x, kMethods); });
    f.enumeration("preconditioner", v.preconditioner,
                  [](const std::string& x) { return parse_or_throw(x, kPreconditioners); });
    f.number("tol", v.tol);
    f.integer("maxIters", v.max_iters);
    f.integer("directMaxUnknowns", v.direct_max_unknowns);
    f.finish();
  }
  if (const json* s = root.object("train")) {
    Fields f(*s, "train");
    auto& t = c.train;
    f.number("learningRate", t.learning_rate);
    f.number("cueLearningRate", t.cue_learning_rate);
    f.integer("steps", t.steps);
    f.integer("batchSize", t.batch_size);
    f.enumeration("optimizer", t.optimizer, [](const std::string& x) { return parse_or_throw(x, kOptimizers); });
    f.number("adamBeta1", t.adam_beta1);
    f.number("adamBeta2", t.adam_beta2);
    f.number("adamEps", t.adam_eps);
    f.boolean("cosineDecay", t.cosine_decay);
    f.boolean("learnTransition", t.learn_transition);
    if (const json* a = f.object("ablation")) {
      Fields af(*a, "train.ablation");
      read_ablation(af, t.ablation);
    }
    f.unsigned64("seed", t.seed);
    f.integer("threads", t.threads);
    f.boolean("recordTiming", t.record_timing);
    f.finish();
  }
  if (const json* s = root.object("predictor")) {
    Fields f(*s, "predictor");
    f.integer("hidden", c.predictor.hidden);
    f.boolean("smoothing", c.predictor.smoothing);
    f.number("initScale", c.predictor.init_scale);
    f.finish();
  }
  if (const json* s = root.object("vesselness")) {
    Fields f(*s, "vesselness");
    auto& v = c.vesselness;
    f.numbers("scales", v.scales);
    f.number("beta", v.beta);
    f.number("cFraction", v.c_fraction);
    f.number("cFloor", v.c_floor);
    f.enumeration("polarity", v.polarity, [](const std::string& x) { return parse_or_throw(x, kPolarities); });
    f.finish();
  }
  if (root.has("connectivity")) {
    int k = 0;
    root.integer("connectivity", k);
    if (k != 4 && k != 8) throw FormatError("connectivity: expected 4 or 8");
    c.connectivity = k == 4 ? Connectivity::Four : Connectivity::Eight;
  }
  root.finish();
  validate(c);
  return c;
}

std::string run_config_to_json(const RunConfig& c) {
  const auto& l = c.loss;
  const auto& s = c.solver;
  const auto& t = c.train;
  const auto& v = c.vesselness;
  json j;
  j["transition"] = write_transition(c.transition);
  j["loss"] = {{"alpha", l.alpha},
               {"beta", l.beta},
               {"gamma", l.gamma},
               {"etaSkel", l.eta_skel},
               {"etaGeo", l.eta_geo},
               {"vesselLabel", l.vessel_label},
               {"softMinTemperature", l.soft_min_temperature},
               {"nearRadius", l.near_radius},
               {"skeletonIterations", l.skeleton_iterations},
               {"geodesicEpsilon", l.geodesic_epsilon},
               {"geodesicSweeps", l.geodesic_sweeps},
               {"stopGradientWeights", l.stop_gradient_weights},
               {"entropyPerPixel", l.entropy_per_pixel}};
  j["solver"] = {{"method", name_of(s.method, kMethods)},
                 {"preconditioner", name_of(s.preconditioner, kPreconditioners)},
                 {"tol", s.tol},
                 {"maxIters", s.max_iters},
                 {"directMaxUnknowns", s.direct_max_unknowns}};
  j["train"] = {{"learningRate", t.learning_rate},
                {"cueLearningRate", t.cue_learning_rate},
                {"steps", t.steps},
                {"batchSize", t.batch_size},
                {"optimizer", name_of(t.optimizer, kOptimizers)},
                {"adamBeta1", t.adam_beta1},
                {"adamBeta2", t.adam_beta2},
                {"adamEps", t.adam_eps},
                {"cosineDecay", t.cosine_decay},
                {"learnTransition", t.learn_transition},
                {"ablation", write_ablation(t.ablation)},
                {"seed", t.seed},
                {"threads", t.threads},
                {"recordTiming", t.record_timing}};
  j["predictor"] = {{"hidden", c.predictor.hidden},
                    {"smoothing", c.predictor.smoothing},
                    {"initScale", c.predictor.init_scale}};
  j["vesselness"] = {{"scales", v.scales},
                     {"beta", v.beta},
                     {"cFraction", v.c_fraction},
                     {"cFloor", v.c_floor},
                     {"polarity", name_of(v.polarity, kPolarities)}};
  j["connectivity"] = c.connectivity == Connectivity::Four ? 4 : 8;
  return j.dump(2);
}

RunConfig read_run_config(const std::filesystem::path& path) {
  try {
    return run_config_from_json(read_text_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// scene records

std::string scene_record_to_json(const SceneRecord& r) {
  json j;
  j["seed"] = r.seed;
  j["tier"] = r.tier;
  j["tree"] = {{"fieldSize", r.tree.field_size},
               {"branches", r.tree.branches},
               {"widthMin", r.tree.width_min},
               {"widthMax", r.tree.width_max},
               {"curvature", r.tree.curvature}};
  j["render"] = {{"contrast", r.render.contrast},
                 {"noiseSigma", r.render.noise_sigma},
                 {"blurSigma", r.render.blur_sigma},
                 {"illuminationGradient", r.render.illumination_gradient}};
  const auto& a = r.annotation;
  j["annotation"] = {{"numSeeds", a.num_seeds},         {"scribbleLen", a.scribble_len},
                     {"numScribbles", a.num_scribbles}, {"bgScribbles", a.bg_scribbles},
                     {"bgScribbleLen", a.bg_scribble_len}, {"bgMargin", a.bg_margin},
                     {"vesselLabel", a.vessel_label},   {"backgroundLabel", a.background_label},
                     {"numLabels", a.num_labels}};
  return j.dump(2);
}

SceneRecord scene_record_from_json(const std::string& text) {
  const json j = parse_json(text, "scene record");
  SceneRecord r;
  Fields root(j, "");
  root.unsigned64("seed", r.seed);
  root.integer("tier", r.tier);
  if (const json* s = root.object("tree")) {
    Fields f(*s, "tree");
    f.integer("fieldSize", r.tree.field_size);
    f.integer("branches", r.tree.branches);
    f.number("widthMin", r.tree.width_min);
    f.number("widthMax", r.tree.width_max);
    f.number("curvature", r.tree.curvature);
    f.finish();
  }
  if (const json* s = root.object("render")) {
    Fields f(*s, "render");
    f.number("contrast", r.render.contrast);
    f.number("noiseSigma", r.render.noise_sigma);
    f.number("blurSigma", r.render.blur_sigma);
    f.number("illuminationGradient", r.render.illumination_gradient);
    f.finish();
  }
  if (const json* s = root.object("annotation")) {
    Fields f(*s, "annotation");
    auto& a = r.annotation;
    f.integer("numSeeds", a.num_seeds);
    f.integer("scribbleLen", a.scribble_len);
    f.integer("numScribbles", a.num_scribbles);
    f.integer("bgScribbles", a.bg_scribbles);
    f.integer("bgScribbleLen", a.bg_scribble_len);
    f.integer("bgMargin", a.bg_margin);
    f.integer("vesselLabel", a.vessel_label);
    f.integer("backgroundLabel", a.background_label);
    f.integer("numLabels", a.num_labels);
    f.finish();
  }
  root.finish();
  validate(r.tree);
  validate(r.render);
  validate(r.annotation);
  return r;
}

// ---------------------------------------------------------------------------
// checkpoints

std::string checkpoint_to_json(const Checkpoint& c) {
  json j;
  j["format"] = "vrw-checkpoint";
  j["version"] = 1;
  j["steps"] = c.steps;
  j["ablation"] = write_ablation(c.ablation);
  j["predictor"] = write_predictor(c.state.predictor);
  j["cues"] = write_cues(c.state.cues);
  j["transition"] = write_transition(c.state.transition);
  return j.dump(1);
}

Checkpoint checkpoint_from_json(const std::string& text) {
  const json j = parse_json(text, "checkpoint");
  Fields root(j, "");
  std::string format;
  int version = 0;
  root.text("format", format);
  root.integer("version", version);
  if (format != "vrw-checkpoint") throw FormatError("format: expected 'vrw-checkpoint'");
  if (version != 1) throw FormatError("version: unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  root.integer("steps", c.steps);
  if (const json* a = root.object("ablation")) {
    Fields af(*a, "ablation");
    read_ablation(af, c.ablation);
  }
  const json* p = root.object("predictor");
  const json* q = root.object("cues");
  const json* t = root.object("transition");
  root.finish();
  if (!p || !q || !t) throw FormatError("checkpoint: predictor, cues and transition are required");
  c.state.predictor = read_predictor(*p, "predictor");
  c.state.cues = read_cues(*q, "cues");
  Fields tf(*t, "transition");
  read_transition(tf, c.state.transition);
  validate(c.state.transition);
  if (c.state.predictor.channels != c.state.cues.channels()) {
    throw FormatError("checkpoint: predictor and cue head disagree on the channel count");
  }
  return c;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  write_text_file(path, checkpoint_to_json(c) + "\n");
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  try {
    return checkpoint_from_json(read_text_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// logs and reports

std::string step_record_to_json(const StepRecord& r) {
  json j;
  j["step"] = r.step;
  j["learningRate"] = r.learning_rate;
  j["loss"] = {{"weightedKl", r.loss.weighted_kl},
               {"entropy", r.loss.entropy_term},
               {"rSkel", r.loss.r_skel},
               {"rGeo", r.loss.r_geo},
               {"total", r.loss.total}};
  j["gradNorm"] = {{"predictor", r.grad_norm_predictor},
                   {"cues", r.grad_norm_cues},
                   {"transition", r.grad_norm_transition}};
  j["solverIterations"] = r.solver_iterations;
  j["degenerateRows"] = r.degenerate_rows;
  j["seconds"] = {{"cues", r.seconds_cues},
                  {"solve", r.seconds_solve},
                  {"objective", r.seconds_objective},
                  {"backward", r.seconds_backward},
                  {"update", r.seconds_update}};
  return j.dump();
}

void write_train_log(std::ostream& out, const TrainLog& log) {
  for (const auto& r : log.steps) out << step_record_to_json(r) << '\n';
}

std::string eval_report_to_json(const EvalReport& report) {
  json images = json::array();
  for (const auto& m : report.images) {
    json e = {{"name", m.name},       {"dice", m.dice},
              {"iou", m.iou},         {"precision", m.precision},
              {"recall", m.recall},   {"centerlineF1", m.centerline_f1},
              {"ace", m.ace}};
    if (m.has_ece) e["ece"] = m.ece;
    images.push_back(e);
  }
  json summary = {{"dice", summary_json(report.dice)},
                  {"iou", summary_json(report.iou)},
                  {"precision", summary_json(report.precision)},
                  {"recall", summary_json(report.recall)},
                  {"centerlineF1", summary_json(report.centerline_f1)},
                  {"ace", summary_json(report.ace)}};
  const bool any_ece = std::any_of(report.images.begin(), report.images.end(), [](auto& m) { return m.has_ece; });
  if (any_ece) summary["ece"] = summary_json(report.ece);
  return json{{"images", images}, {"summary", summary}}.dump(2);
}

// ---------------------------------------------------------------------------
// scene directories

std::string scene_name(std::uint64_t seed) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene-%04llu", static_cast<unsigned long long>(seed));
  return buf;
}

void write_scene_files(const std::filesystem::path& dir, const SyntheticScene& scene) {
  std::filesystem::create_directories(dir);
  const std::string name = scene_name(scene.record.seed);
  write_text_file(dir / (name + ".json"), scene_record_to_json(scene.record) + "\n");
  write_raster(dir / (name + ".image.vrw"), raster_from_image(scene.image));
  write_raster(dir / (name + ".mask.vrw"), mask_raster(scene.tree.mask, scene.tree.width, scene.tree.height));
  write_labels(dir / (name + ".labels.json"), scene.labels, scene.image.width);
}

SceneFiles read_scene_files(const std::filesystem::path& dir, const std::string& name) {
  SceneFiles s;
  s.name = name;
  try {
    s.record = scene_record_from_json(read_text_file(dir / (name + ".json")));
  } catch (const FormatError& e) {
    throw FormatError((dir / (name + ".json")).string() + ": " + e.what());
  }
  s.image = read_image(dir / (name + ".image.vrw"));
  const auto mask_path = dir / (name + ".mask.vrw");
  if (std::filesystem::exists(mask_path)) {
    int w = 0, h = 0;
    s.mask = read_mask(mask_path, &w, &h);
    if (w != s.image.width || h != s.image.height) throw FormatError(mask_path.string() + ": size differs from image");
  }
  s.labels = read_labels(dir / (name + ".labels.json"), s.image.width, s.image.height);
  return s;
}

std::vector<SceneFiles> read_scene_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw FormatError("not a directory: " + dir.string());
  std::vector<std::string> names;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto file = e.path().filename().string();
    if (file.rfind("scene-", 0) != 0 || e.path().extension() != ".json") continue;
    if (file.find(".labels.json") != std::string::npos) continue;
    names.push_back(e.path().stem().string());
  }
  std::sort(names.begin(), names.end());
  std::vector<SceneFiles> out;
  for (const auto& n : names) out.push_back(read_scene_files(dir, n));
  return out;
}

// ---------------------------------------------------------------------------
// misc

std::string read_text_file(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
  if (!out) throw FormatError("cannot write " + path.string());
}

Ablation parse_ablation(const std::string& list) {
  Ablation a;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item.empty() || item == "none") continue;
    if (item == "freezeCues") a.freeze_cues = true;
    else if (item == "gammaZero") a.gamma_zero = true;
    else if (item == "alphaZero") a.alpha_zero = true;
    else if (item == "constantVesselness") a.constant_vesselness = true;
    else throw ValidationError("unknown ablation flag '" + item + "'");
  }
  return a;
}

std::string ablation_to_string(const Ablation& a) {
  std::string s;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!s.empty()) s += ',';
    s += name;
  };
  add(a.freeze_cues, "freezeCues");
  add(a.gamma_zero, "gammaZero");
  add(a.alpha_zero, "alphaZero");
  add(a.constant_vesselness, "constantVesselness");
  return s.empty() ? "none" : s;
}

}  // namespace vrw
