#include "jobvs/lattice.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "jobvs/config_json.hpp"

namespace jobvs {
namespace {

std::string node_name(int column, int level) { return "node" + std::to_string(column) + "_" + std::to_string(level); }
std::string down_name(int column, int level) { return "down" + std::to_string(column) + "_" + std::to_string(level); }
std::string up_name(int column, int level) { return "up" + std::to_string(column) + "_" + std::to_string(level); }
std::string head_name(const char* task, int level) { return std::string("head.") + task + "." + std::to_string(level); }

Tensor weight_shape(std::size_t cout, std::size_t fan_in) { return Tensor(cout, {fan_in, 1, 1}); }
Tensor vector_shape(std::size_t n, float fill) { return Tensor(n, {1, 1, 1}, fill); }

void add_block(std::map<std::string, Tensor>& w, const std::string& name, std::size_t cin, std::size_t c) {
  w[name + ".conv0.w"] = weight_shape(c, cin * 27);
  w[name + ".norm0.g"] = vector_shape(c, 1.0f);
  w[name + ".norm0.b"] = vector_shape(c, 0.0f);
  w[name + ".conv1.w"] = weight_shape(c, c * 27);
  w[name + ".norm1.g"] = vector_shape(c, 1.0f);
  w[name + ".norm1.b"] = vector_shape(c, 0.0f);
}

void add_linear(std::map<std::string, Tensor>& w, const std::string& name, std::size_t cout, std::size_t fan_in) {
  w[name + ".w"] = weight_shape(cout, fan_in);
  w[name + ".b"] = vector_shape(cout, 0.0f);
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Visits the lattice in dependency order; shared by parameter layout and forward.
struct Builder {
  const ModelParams& model;
  Gradients* grads;
  nn::Tape& tape;

  nn::ParamRef param(const std::string& key) const {
    auto it = model.weights.find(key);
    if (it == model.weights.end()) throw DataError("missing weight " + key);
    Tensor* g = nullptr;
    if (grads) g = &grads->tensors.at(key);
    return {&it->second, g};
  }

  nn::Tape::Id block(nn::Tape::Id x, const std::string& name) {
    x = tape.conv3(x, param(name + ".conv0.w"), {}, 1);
    x = tape.norm_lrelu(x, param(name + ".norm0.g"), param(name + ".norm0.b"));
    x = tape.conv3(x, param(name + ".conv1.w"), {}, 1);
    return tape.norm_lrelu(x, param(name + ".norm1.g"), param(name + ".norm1.b"));
  }

  nn::Tape::Id down(nn::Tape::Id x, const std::string& name) {
    return tape.conv3(x, param(name + ".w"), param(name + ".b"), 2);
  }

  // 1x1x1 projection then trilinear x2; both are linear and commute, and
  // projecting first runs the channel mixing at the coarser resolution.
  nn::Tape::Id up(nn::Tape::Id x, const std::string& name) {
    return tape.upsample2(tape.conv1(x, param(name + ".w"), param(name + ".b")));
  }

  nn::Tape::Id head(const std::vector<nn::Tape::Id>& last_column, const char* task) {
    std::vector<nn::Tape::Id> terms;
    for (std::size_t level = 0; level < last_column.size(); ++level) {
      const std::string name = head_name(task, static_cast<int>(level));
      nn::Tape::Id y = tape.conv1(last_column[level], param(name + ".w"), param(name + ".b"));
      for (std::size_t k = 0; k < level; ++k) y = tape.upsample2(y);
      terms.push_back(y);
    }
    return terms.size() == 1 ? terms.front() : tape.add(terms);
  }
};

constexpr char kMagic[8] = {'J', 'O', 'B', 'V', 'S', 'C', 'K', '1'};

}  // namespace

std::string to_string(TaskMode mode) {
  switch (mode) {
    case TaskMode::joint: return "joint";
    case TaskMode::vessel_only: return "vessel_only";
    case TaskMode::brain_only: return "brain_only";
  }
  return "joint";
}

TaskMode task_mode_from_string(const std::string& s) {
  if (s == "joint") return TaskMode::joint;
  if (s == "vessel_only") return TaskMode::vessel_only;
  if (s == "brain_only") return TaskMode::brain_only;
  throw UsageError("unknown task_mode '" + s + "' (expected joint|vessel_only|brain_only)");
}

int LatticeConfig::channels(int level) const {
  int c = base_channels;
  for (int i = 0; i < level; ++i) c *= channel_growth;
  return c;
}

void validate(const LatticeConfig& cfg) {
  if (cfg.lattice_length < 1) throw UsageError("lattice_length must be >= 1");
  if (cfg.n_levels < 2) throw UsageError("n_levels must be >= 2");
  if (cfg.lattice_length > cfg.n_levels - 1) throw UsageError("lattice_length must be <= n_levels - 1");
  if (cfg.base_channels < 1 || cfg.channel_growth < 1) throw UsageError("channel counts must be positive");
  if (cfg.n_classes_per_task != 2) throw UsageError("n_classes_per_task must be 2 (binary tasks)");
  const std::size_t div = std::size_t{1} << (cfg.n_levels - 1);
  for (std::size_t s : cfg.patch_size)
    if (s == 0 || s % div != 0)
      throw UsageError("patch_size " + std::to_string(s) + " is not divisible by 2^(n_levels-1) = " +
                       std::to_string(div));
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [k, t] : weights) n += t.size();
  return n;
}

std::size_t ModelParams::backbone_parameter_count() const {
  std::size_t n = 0;
  for (const auto& [k, t] : weights)
    if (k.rfind("head.", 0) != 0) n += t.size();
  return n;
}

std::uint64_t ModelParams::checksum() const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& [k, t] : weights) {
    mix(k.data(), k.size());
    mix(t.data(), t.size() * sizeof(float));
  }
  return h;
}

Gradients Gradients::zeros_like(const ModelParams& model) {
  Gradients g;
  for (const auto& [k, t] : model.weights) g.tensors.emplace(k, Tensor(t.channels(), t.spatial(), 0.0f));
  return g;
}

void Gradients::zero() {
  for (auto& [k, t] : tensors) t.fill(0.0f);
}

double Gradients::l2_norm() const {
  double s = 0.0;
  for (const auto& [k, t] : tensors)
    for (float v : t.values()) s += static_cast<double>(v) * v;
  return std::sqrt(s);
}

ModelParams build_model(const LatticeConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  ModelParams m;
  m.config = cfg;
  auto& w = m.weights;
  const int levels = cfg.n_levels, length = cfg.lattice_length;
  auto ch = [&](int level) { return static_cast<std::size_t>(cfg.channels(level)); };
  for (int c = 0; c <= length; ++c) {
    for (int l = 0; l < levels - c; ++l) {
      add_block(w, node_name(c, l), (c == 0 && l == 0) ? 1 : ch(l), ch(l));
      if (l > 0) add_linear(w, down_name(c, l), ch(l), ch(l - 1) * 27);
      if (c > 0) add_linear(w, up_name(c, l), ch(l), ch(l + 1));
    }
  }
  const int head_levels = levels - length;
  const auto classes = static_cast<std::size_t>(cfg.n_classes_per_task);
  for (int l = 0; l < head_levels; ++l) {
    if (cfg.has_vessel_head()) add_linear(w, head_name("vessel", l), classes, ch(l));
    if (cfg.has_brain_head()) add_linear(w, head_name("brain", l), classes, ch(l));
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  const float gain = std::sqrt(2.0f / (1.0f + 0.01f * 0.01f));
  for (auto& [name, t] : w) {
    if (!ends_with(name, ".w")) continue;
    const float std = gain / std::sqrt(static_cast<float>(t.voxels()));
    for (float& v : t.values()) v = std * normal(rng);
  }
  return m;
}

PredictionPair LatticeGraph::outputs() const {
  PredictionPair p;
  if (vessel) p.vessel_logits = tape.value(*vessel);
  if (brain) p.brain_logits = tape.value(*brain);
  return p;
}

void LatticeGraph::backward(const Tensor* d_vessel, const Tensor* d_brain) {
  if (d_vessel && vessel) tape.grad(*vessel) = *d_vessel;
  if (d_brain && brain) tape.grad(*brain) = *d_brain;
  tape.backward();
}

LatticeGraph forward_graph(const ModelParams& model, const Tensor& patch, Gradients* grads) {
  const LatticeConfig& cfg = model.config;
  if (patch.channels() != 1 || patch.spatial() != cfg.patch_size)
    throw DataError("input patch shape does not match the model patch_size");
  LatticeGraph g;
  Builder b{model, grads, g.tape};
  g.input = g.tape.input(patch);

  const int levels = cfg.n_levels, length = cfg.lattice_length;
  std::vector<nn::Tape::Id> prev;  // previous column, indexed by level
  for (int l = 0; l < levels; ++l) {
    const nn::Tape::Id in = l == 0 ? g.input : b.down(prev.back(), down_name(0, l));
    prev.push_back(b.block(in, node_name(0, l)));
  }
  for (int c = 1; c <= length; ++c) {
    std::vector<nn::Tape::Id> col;
    for (int l = 0; l < levels - c; ++l) {
      std::vector<nn::Tape::Id> terms{prev[static_cast<std::size_t>(l)]};
      if (l > 0) terms.push_back(b.down(col.back(), down_name(c, l)));
      terms.push_back(b.up(prev[static_cast<std::size_t>(l + 1)], up_name(c, l)));
      col.push_back(b.block(g.tape.add(terms), node_name(c, l)));
    }
    prev = std::move(col);
  }
  if (cfg.has_vessel_head()) g.vessel = b.head(prev, "vessel");
  if (cfg.has_brain_head()) g.brain = b.head(prev, "brain");
  return g;
}

PredictionPair forward(const ModelParams& model, const Tensor& patch) {
  return forward_graph(model, patch, nullptr).outputs();
}

template <class T>
BasicTensor<T> softmax(const BasicTensor<T>& logits) {
  BasicTensor<T> out(logits.channels(), logits.spatial());
  const std::size_t nc = logits.channels(), nv = logits.voxels();
  const T* in = logits.data();
  T* o = out.data();
  for (std::size_t i = 0; i < nv; ++i) {
    T mx = in[i];
    for (std::size_t c = 1; c < nc; ++c) mx = std::max(mx, in[c * nv + i]);
    T sum = 0;
    for (std::size_t c = 0; c < nc; ++c) {
      const T e = std::exp(in[c * nv + i] - mx);
      o[c * nv + i] = e;
      sum += e;
    }
    for (std::size_t c = 0; c < nc; ++c) o[c * nv + i] /= sum;
  }
  return out;
}

template BasicTensor<float> softmax(const BasicTensor<float>&);
template BasicTensor<double> softmax(const BasicTensor<double>&);

ProbabilityPair softmax_probs(const PredictionPair& pred) {
  auto checked = [](const Tensor& t) {
    for (float v : t.values())
      if (!std::isfinite(v)) throw NumericalError("non-finite logits");
    return softmax(t);
  };
  ProbabilityPair p;
  if (pred.vessel_logits) p.vessel = checked(*pred.vessel_logits);
  if (pred.brain_logits) p.brain = checked(*pred.brain_logits);
  return p;
}

void save_checkpoint(const ModelParams& model, const nlohmann::json& meta, const std::filesystem::path& path) {
  nlohmann::json header;
  header["config"] = model.config;
  header["meta"] = meta;
  nlohmann::json index = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : model.weights) {
    index.push_back({{"name", name}, {"channels", t.channels()}, {"spatial", t.spatial()}, {"offset", offset}});
    offset += t.size();
  }
  header["tensors"] = index;
  const std::string text = header.dump();

  if (!path.parent_path().empty() && !std::filesystem::is_directory(path.parent_path()))
    throw DataError("checkpoint directory does not exist: " + path.parent_path().string());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write checkpoint " + path.string());
  os.write(kMagic, sizeof kMagic);
  const std::uint64_t len = text.size();
  os.write(reinterpret_cast<const char*>(&len), sizeof len);
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : model.weights)
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
  if (!os) throw DataError("failed writing checkpoint " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path, nlohmann::json* meta) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("missing checkpoint " + path.string());
  char magic[8];
  std::uint64_t len = 0;
  is.read(magic, sizeof magic);
  is.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!is || std::memcmp(magic, kMagic, sizeof kMagic) != 0 || len > (1u << 30))
    throw DataError("not a checkpoint: " + path.string());
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  std::vector<char> payload((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  ModelParams m;
  try {
    const auto header = nlohmann::json::parse(text);
    m.config = header.at("config").get<LatticeConfig>();
    if (meta) *meta = header.value("meta", nlohmann::json::object());
    for (const auto& e : header.at("tensors")) {
      Tensor t(e.at("channels").get<std::size_t>(), e.at("spatial").get<Shape3>());
      const auto offset = e.at("offset").get<std::size_t>();
      if ((offset + t.size()) * sizeof(float) > payload.size()) throw DataError("truncated checkpoint payload");
      std::memcpy(t.data(), payload.data() + offset * sizeof(float), t.size() * sizeof(float));
      m.weights.emplace(e.at("name").get<std::string>(), std::move(t));
    }
    validate(m.config);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed checkpoint header in " + path.string() + ": " + e.what());
  } catch (const UsageError& e) {
    throw DataError("bad checkpoint config in " + path.string() + ": " + e.what());
  }
  const ModelParams reference = build_model(m.config, 0);
  for (const auto& [k, t] : reference.weights) {
    auto it = m.weights.find(k);
    if (it == m.weights.end() || !it->second.same_shape(t)) throw DataError("checkpoint is missing weight " + k);
  }
  for (const auto& [k, t] : m.weights)
    for (float v : t.values())
      if (!std::isfinite(v)) throw NumericalError("checkpoint weight " + k + " is not finite");
  return m;
}

}  // namespace jobvs
