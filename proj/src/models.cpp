#include "rainshield/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "rainshield/hash.hpp"

namespace rainshield {

std::string_view to_string(ModelKind k) { return k == ModelKind::seg ? "seg" : "derain"; }

namespace {

std::map<std::string, std::string> parse_fields(std::string_view s, std::string_view prefix) {
  if (s.substr(0, prefix.size()) != prefix)
    throw std::invalid_argument("descriptor '" + std::string(s) + "' does not start with " +
                                std::string(prefix));
  std::map<std::string, std::string> out;
  std::string rest(s.substr(prefix.size()));
  std::stringstream ss(rest);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("descriptor field '" + item + "'");
    out[item.substr(0, eq)] = item.substr(eq + 1);
  }
  return out;
}

int field_int(const std::map<std::string, std::string>& f, const std::string& key) {
  auto it = f.find(key);
  if (it == f.end()) throw std::invalid_argument("descriptor missing '" + key + "'");
  return std::stoi(it->second);
}

}  // namespace

std::string SegDescriptor::str() const {
  return "seg:in=" + std::to_string(in_channels) + ",classes=" + std::to_string(num_classes) +
         ",width=" + std::to_string(width);
}

SegDescriptor SegDescriptor::parse(std::string_view s) {
  const auto f = parse_fields(s, "seg:");
  SegDescriptor d;
  d.in_channels = field_int(f, "in");
  d.num_classes = field_int(f, "classes");
  d.width = field_int(f, "width");
  return d;
}

std::string DerainDescriptor::str() const {
  return "derain:channels=" + std::to_string(channels) + ",blocks=" + std::to_string(blocks) +
         ",mode=" + (mode == DerainMode::residual ? "residual" : "direct");
}

DerainDescriptor DerainDescriptor::parse(std::string_view s) {
  const auto f = parse_fields(s, "derain:");
  DerainDescriptor d;
  d.channels = field_int(f, "channels");
  d.blocks = field_int(f, "blocks");
  auto it = f.find("mode");
  if (it == f.end()) throw std::invalid_argument("descriptor missing 'mode'");
  if (it->second == "residual")
    d.mode = DerainMode::residual;
  else if (it->second == "direct")
    d.mode = DerainMode::direct;
  else
    throw std::invalid_argument("unknown derain mode '" + it->second + "'");
  return d;
}

// ---------------------------------------------------------------------------

template <typename T>
std::uint64_t ParamStore<T>::param_hash() const {
  return fnv1a(std::span<const T>(params_));
}

template <typename T>
std::size_t ParamStore<T>::add_layer(const ConvGeometry& g) {
  slots_.push_back({g, params_.size()});
  params_.resize(params_.size() + g.param_count(), T(0));
  return slots_.size() - 1;
}

template <typename T>
void ParamStore<T>::he_init(std::uint64_t seed, std::span<const double> layer_gain) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t l = 0; l < slots_.size(); ++l) {
    const auto& g = slots_[l].geom;
    const double fan_in = static_cast<double>(g.in_channels) * g.kernel * g.kernel;
    const double std = layer_gain[l] * std::sqrt(2.0 / fan_in);
    for (std::size_t i = 0; i < g.weight_count(); ++i)
      params_[slots_[l].offset + i] = static_cast<T>(std * normal(rng));
    for (int i = 0; i < g.out_channels; ++i)
      params_[slots_[l].offset + g.weight_count() + static_cast<std::size_t>(i)] = T(0);
  }
}

template <typename T>
void ParamStore<T>::set_params(std::vector<T> p) {
  if (p.size() != params_.size())
    throw std::invalid_argument("parameter count " + std::to_string(p.size()) +
                                " does not match architecture (" +
                                std::to_string(params_.size()) + ")");
  params_ = std::move(p);
}

template <typename T>
void ParamStore<T>::conv(std::size_t l, const Tensor<T>& in, Tensor<T>& out) const {
  kernels::conv2d_forward(in, weight(l), bias(l), slots_[l].geom, out);
}

template <typename T>
void ParamStore<T>::conv_back(std::size_t l, const Tensor<T>& in, const Tensor<T>& dout,
                              Tensor<T>* din, std::span<T> dparams) const {
  const auto& s = slots_[l];
  std::span<T> dw, db;
  if (!dparams.empty()) {
    dw = dparams.subspan(s.offset, s.geom.weight_count());
    db = dparams.subspan(s.offset + s.geom.weight_count(),
                         static_cast<std::size_t>(s.geom.out_channels));
  }
  kernels::conv2d_backward(in, weight(l), s.geom, dout, din, dw, db);
}

// ---------------------------------------------------------------------------

namespace {
enum SegLayer : std::size_t { L0, L1, L2, L3, L4, L5, L6, L7, L8, L9, L10, kSegLayers };

template <typename T>
Tensor<T> shifted(const Tensor<T>& x, T offset) {
  Tensor<T> out = x;
  for (auto& v : out.data) v += offset;
  return out;
}
}  // namespace

template <typename T>
void SegNet<T>::build() {
  if (desc_.in_channels < 1 || desc_.num_classes < 2 || desc_.width < 1)
    throw std::invalid_argument("invalid SegDescriptor " + desc_.str());
  const int w = desc_.width;
  const int in = desc_.in_channels;
  const ConvGeometry geoms[kSegLayers] = {
      {in, w, 3, 1, 1},         {w, 2 * w, 3, 2, 1},     {2 * w, 2 * w, 3, 1, 1},
      {2 * w, 4 * w, 3, 2, 1},  {4 * w, 4 * w, 3, 1, 1}, {4 * w, 4 * w, 3, 2, 1},
      {4 * w, 4 * w, 3, 1, 1},  {4 * w, 4 * w, 3, 1, 1}, {4 * w, 2 * w, 3, 1, 1},
      {2 * w, w, 3, 1, 1},      {w, desc_.num_classes, 1, 1, 0},
  };
  for (const auto& g : geoms) this->add_layer(g);
}

template <typename T>
SegNet<T>::SegNet(const SegDescriptor& d, std::uint64_t seed) : desc_(d) {
  build();
  std::vector<double> gain(kSegLayers, 1.0);
  gain[L10] = std::sqrt(0.5);
  this->he_init(seed, gain);
}

template <typename T>
SegNet<T>::SegNet(const SegDescriptor& d, std::vector<T> params) : desc_(d) {
  build();
  this->set_params(std::move(params));
}

template <typename T>
void SegNet<T>::check_input(const Tensor<T>& x) const {
  if (x.c != desc_.in_channels || x.h % 8 || x.w % 8 || x.h < 8 || x.w < 8 || x.n < 1)
    throw ShapeError("SegNet: input " + x.shape_string() + " needs " +
                     std::to_string(desc_.in_channels) + " channels and H, W divisible by 8");
}

template <typename T>
Tensor<T> SegNet<T>::forward(const Tensor<T>& x) const {
  Cache c;
  return forward(x, c);
}

template <typename T>
Tensor<T> SegNet<T>::forward(const Tensor<T>& x, Cache& c) const {
  check_input(x);
  auto cr = [this](std::size_t l, const Tensor<T>& in, Tensor<T>& out) {
    this->conv(l, in, out);
    kernels::relu_inplace(out);
  };
  c.x0 = shifted(x, T(-0.5));
  cr(L0, c.x0, c.e0);
  cr(L1, c.e0, c.e1);
  cr(L2, c.e1, c.e1b);
  cr(L3, c.e1b, c.e2);
  cr(L4, c.e2, c.e2b);
  cr(L5, c.e2b, c.e3);
  cr(L6, c.e3, c.e3b);
  kernels::upsample2x_forward(c.e3b, c.u2);
  cr(L7, c.u2, c.a7);
  c.d2 = c.a7;
  kernels::add_inplace(c.d2, c.e2b);
  kernels::upsample2x_forward(c.d2, c.u1);
  cr(L8, c.u1, c.a8);
  c.d1 = c.a8;
  kernels::add_inplace(c.d1, c.e1b);
  kernels::upsample2x_forward(c.d1, c.u0);
  cr(L9, c.u0, c.a9);
  c.d0 = c.a9;
  kernels::add_inplace(c.d0, c.e0);
  Tensor<T> logits;
  this->conv(L10, c.d0, logits);
  return logits;
}

template <typename T>
void SegNet<T>::backward(const Cache& c, const Tensor<T>& dlogits, Tensor<T>* dinput,
                         std::span<T> dparams) const {
  if (!dparams.empty() && dparams.size() != this->param_count())
    throw std::invalid_argument("SegNet::backward: gradient buffer size");
  Tensor<T> g_d0, g_u0, g_d1, g_u1, g_d2, g_u2, g, tmp;

  this->conv_back(L10, c.d0, dlogits, &g_d0, dparams);

  g = g_d0;  // through a9
  kernels::relu_backward(c.a9, g);
  this->conv_back(L9, c.u0, g, &g_u0, dparams);
  kernels::upsample2x_backward(g_u0, g_d1);

  g = g_d1;  // through a8
  kernels::relu_backward(c.a8, g);
  this->conv_back(L8, c.u1, g, &g_u1, dparams);
  kernels::upsample2x_backward(g_u1, g_d2);

  g = g_d2;  // through a7
  kernels::relu_backward(c.a7, g);
  this->conv_back(L7, c.u2, g, &g_u2, dparams);
  Tensor<T> g_e3b;
  kernels::upsample2x_backward(g_u2, g_e3b);

  kernels::relu_backward(c.e3b, g_e3b);
  Tensor<T> g_e3;
  this->conv_back(L6, c.e3, g_e3b, &g_e3, dparams);
  kernels::relu_backward(c.e3, g_e3);
  Tensor<T> g_e2b;
  this->conv_back(L5, c.e2b, g_e3, &g_e2b, dparams);
  kernels::add_inplace(g_e2b, g_d2);  // skip into d2
  kernels::relu_backward(c.e2b, g_e2b);
  Tensor<T> g_e2;
  this->conv_back(L4, c.e2, g_e2b, &g_e2, dparams);
  kernels::relu_backward(c.e2, g_e2);
  Tensor<T> g_e1b;
  this->conv_back(L3, c.e1b, g_e2, &g_e1b, dparams);
  kernels::add_inplace(g_e1b, g_d1);  // skip into d1
  kernels::relu_backward(c.e1b, g_e1b);
  Tensor<T> g_e1;
  this->conv_back(L2, c.e1, g_e1b, &g_e1, dparams);
  kernels::relu_backward(c.e1, g_e1);
  Tensor<T> g_e0;
  this->conv_back(L1, c.e0, g_e1, &g_e0, dparams);
  kernels::add_inplace(g_e0, g_d0);  // skip into d0
  kernels::relu_backward(c.e0, g_e0);
  this->conv_back(L0, c.x0, g_e0, dinput, dparams);
}

// ---------------------------------------------------------------------------

template <typename T>
void DerainNet<T>::build() {
  if (desc_.channels < 1 || desc_.blocks < 0)
    throw std::invalid_argument("invalid DerainDescriptor " + desc_.str());
  const int ch = desc_.channels;
  this->add_layer({3, ch, 3, 1, 1});
  for (int b = 0; b < desc_.blocks; ++b) this->add_layer({ch, ch, 3, 1, 1});
  this->add_layer({ch, 3, 3, 1, 1});
}

template <typename T>
DerainNet<T>::DerainNet(const DerainDescriptor& d, std::uint64_t seed) : desc_(d) {
  build();
  std::vector<double> gain(this->slots_.size(), 1.0);
  for (int b = 0; b < desc_.blocks; ++b) gain[static_cast<std::size_t>(b) + 1] = 0.5;
  gain.back() = 0.05;
  this->he_init(seed, gain);
}

template <typename T>
DerainNet<T>::DerainNet(const DerainDescriptor& d, std::vector<T> params) : desc_(d) {
  build();
  this->set_params(std::move(params));
}

template <typename T>
void DerainNet<T>::zero_tail() {
  const auto& s = this->slots_.back();
  std::fill(this->params_.begin() + static_cast<std::ptrdiff_t>(s.offset),
            this->params_.begin() + static_cast<std::ptrdiff_t>(s.offset + s.geom.param_count()),
            T(0));
}

template <typename T>
void DerainNet<T>::check_input(const Tensor<T>& x) const {
  if (x.c != 3 || x.n < 1 || x.h < 1 || x.w < 1)
    throw ShapeError("DerainNet: input " + x.shape_string() + " must have 3 channels");
}

template <typename T>
Tensor<T> DerainNet<T>::forward(const Tensor<T>& x) const {
  Cache c;
  return forward(x, c);
}

template <typename T>
Tensor<T> DerainNet<T>::forward(const Tensor<T>& x, Cache& c) const {
  check_input(x);
  const std::size_t nb = static_cast<std::size_t>(desc_.blocks);
  c.x = x;
  c.x0 = shifted(x, T(-0.5));
  c.h.resize(nb + 1);
  c.a.resize(nb);
  this->conv(0, c.x0, c.h[0]);
  kernels::relu_inplace(c.h[0]);
  for (std::size_t b = 0; b < nb; ++b) {
    this->conv(b + 1, c.h[b], c.a[b]);
    kernels::relu_inplace(c.a[b]);
    c.h[b + 1] = c.a[b];
    kernels::add_inplace(c.h[b + 1], c.h[b]);
  }
  this->conv(nb + 1, c.h[nb], c.tail);
  c.pre = c.tail;
  if (desc_.mode == DerainMode::residual)
    for (std::size_t i = 0; i < c.pre.size(); ++i) c.pre.data[i] = x.data[i] - c.tail.data[i];
  Tensor<T> out = c.pre;
  for (auto& v : out.data) v = std::clamp(v, T(0), T(1));
  return out;
}

template <typename T>
Tensor<T> DerainNet<T>::predicted_rain(const Tensor<T>& x) const {
  Cache c;
  Tensor<T> out = forward(x, c);
  if (desc_.mode == DerainMode::residual) return c.tail;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = x.data[i] - out.data[i];
  return out;
}

template <typename T>
void DerainNet<T>::backward(const Cache& c, const Tensor<T>& dout, Tensor<T>* dinput,
                            std::span<T> dparams) const {
  require_same_shape(c.pre, dout, "DerainNet::backward");
  if (!dparams.empty() && dparams.size() != this->param_count())
    throw std::invalid_argument("DerainNet::backward: gradient buffer size");
  const std::size_t nb = static_cast<std::size_t>(desc_.blocks);
  const bool residual = desc_.mode == DerainMode::residual;

  Tensor<T> g_pre = dout;
  for (std::size_t i = 0; i < g_pre.size(); ++i)
    if (c.pre.data[i] < T(0) || c.pre.data[i] > T(1)) g_pre.data[i] = T(0);
  Tensor<T> g_tail = g_pre;
  if (residual)
    for (auto& v : g_tail.data) v = -v;

  Tensor<T> g_h;
  this->conv_back(nb + 1, c.h[nb], g_tail, &g_h, dparams);
  for (std::size_t b = nb; b-- > 0;) {
    Tensor<T> g_a = g_h;
    kernels::relu_backward(c.a[b], g_a);
    Tensor<T> g_prev;
    this->conv_back(b + 1, c.h[b], g_a, &g_prev, dparams);
    kernels::add_inplace(g_h, g_prev);
  }
  kernels::relu_backward(c.h[0], g_h);
  if (dinput) {
    this->conv_back(0, c.x0, g_h, dinput, dparams);
    if (residual) kernels::add_inplace(*dinput, g_pre);
  } else {
    this->conv_back(0, c.x0, g_h, nullptr, dparams);
  }
}

template class ParamStore<float>;
template class ParamStore<double>;
template class SegNet<float>;
template class SegNet<double>;
template class DerainNet<float>;
template class DerainNet<double>;

// ---------------------------------------------------------------------------

namespace {

constexpr const char* kMagic = "RAINSHIELD-CHECKPOINT";

std::string payload_checksum(std::span<const float> p) { return Fnv1a::to_hex(fnv1a(p)); }

template <typename Model>
void write_checkpoint(const std::filesystem::path& path, ModelKind kind, const Model& m,
                      const std::string& descriptor, std::string_view config_hash) {
  const auto params = m.params();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError(path.string() + ": cannot open for writing");
  out << kMagic << "\n"
      << "format_version=" << kCheckpointVersion << "\n"
      << "model_kind=" << to_string(kind) << "\n"
      << "descriptor=" << descriptor << "\n"
      << "config_hash=" << (config_hash.empty() ? Fnv1a::to_hex(fnv1a(std::span<const char>(
                                                      descriptor.data(), descriptor.size())))
                                                : std::string(config_hash))
      << "\n"
      << "param_count=" << params.size() << "\n"
      << "payload_checksum=" << payload_checksum(params) << "\n\n";
  static_assert(sizeof(float) == 4);
  out.write(reinterpret_cast<const char*>(params.data()),
            static_cast<std::streamsize>(params.size_bytes()));
  if (!out) throw CheckpointError(path.string() + ": write failed");
}

CheckpointHeader parse_header(std::istream& in, const std::filesystem::path& path) {
  std::string line;
  if (!std::getline(in, line) || line != kMagic)
    throw CheckpointError(path.string() + ": not a checkpoint file");
  std::map<std::string, std::string> kv;
  while (std::getline(in, line) && !line.empty()) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointError(path.string() + ": corrupt header");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const char* key) {
    auto it = kv.find(key);
    if (it == kv.end())
      throw CheckpointError(path.string() + ": header missing " + std::string(key));
    return it->second;
  };
  CheckpointHeader h;
  try {
    h.format_version = std::stoi(get("format_version"));
    h.param_count = static_cast<std::size_t>(std::stoull(get("param_count")));
  } catch (const std::logic_error&) {
    throw CheckpointError(path.string() + ": corrupt header");
  }
  const auto kind = get("model_kind");
  if (kind == "seg")
    h.kind = ModelKind::seg;
  else if (kind == "derain")
    h.kind = ModelKind::derain;
  else
    throw CheckpointError(path.string() + ": unknown model_kind '" + kind + "'");
  h.descriptor = get("descriptor");
  h.config_hash = get("config_hash");
  h.payload_checksum = get("payload_checksum");
  return h;
}

std::vector<float> read_payload(const std::filesystem::path& path, CheckpointHeader& h,
                                ModelKind want) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(path.string() + ": cannot open");
  h = parse_header(in, path);
  if (h.format_version != kCheckpointVersion)
    throw CheckpointError(path.string() + ": format_version " + std::to_string(h.format_version) +
                          " is not supported (expected " + std::to_string(kCheckpointVersion) +
                          ")");
  if (h.kind != want)
    throw CheckpointError(path.string() + ": kind mismatch, file holds a " +
                          std::string(to_string(h.kind)) + " model, expected " +
                          std::string(to_string(want)));
  std::vector<float> p(h.param_count);
  in.read(reinterpret_cast<char*>(p.data()), static_cast<std::streamsize>(p.size() * sizeof(float)));
  if (static_cast<std::size_t>(in.gcount()) != p.size() * sizeof(float))
    throw CheckpointError(path.string() + ": corrupt payload (truncated)");
  if (in.peek() != std::char_traits<char>::eof())
    throw CheckpointError(path.string() + ": corrupt payload (trailing bytes)");
  if (payload_checksum(p) != h.payload_checksum)
    throw CheckpointError(path.string() + ": corrupt payload (checksum mismatch)");
  return p;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const SegNet<float>& m,
                     std::string_view config_hash) {
  write_checkpoint(path, ModelKind::seg, m, m.descriptor().str(), config_hash);
}

void save_checkpoint(const std::filesystem::path& path, const DerainNet<float>& m,
                     std::string_view config_hash) {
  write_checkpoint(path, ModelKind::derain, m, m.descriptor().str(), config_hash);
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(path.string() + ": cannot open");
  return parse_header(in, path);
}

SegNet<float> load_seg_checkpoint(const std::filesystem::path& path,
                                  const SegDescriptor* expected) {
  CheckpointHeader h;
  auto p = read_payload(path, h, ModelKind::seg);
  SegDescriptor d;
  try {
    d = SegDescriptor::parse(h.descriptor);
  } catch (const std::exception& e) {
    throw CheckpointError(path.string() + ": bad descriptor: " + e.what());
  }
  if (expected && !(d == *expected))
    throw CheckpointError(path.string() + ": architecture mismatch, file has " + d.str() +
                          ", expected " + expected->str());
  try {
    return SegNet<float>(d, std::move(p));
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

DerainNet<float> load_derain_checkpoint(const std::filesystem::path& path,
                                        const DerainDescriptor* expected) {
  CheckpointHeader h;
  auto p = read_payload(path, h, ModelKind::derain);
  DerainDescriptor d;
  try {
    d = DerainDescriptor::parse(h.descriptor);
  } catch (const std::exception& e) {
    throw CheckpointError(path.string() + ": bad descriptor: " + e.what());
  }
  if (expected && !(d == *expected))
    throw CheckpointError(path.string() + ": architecture mismatch, file has " + d.str() +
                          ", expected " + expected->str());
  try {
    return DerainNet<float>(d, std::move(p));
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

}  // namespace rainshield
