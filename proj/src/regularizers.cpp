#include "deqmd/regularizers.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>

namespace deqmd {

namespace {

int wrap(int i, int n) noexcept {
  i %= n;
  return i < 0 ? i + n : i;
}

}  // namespace

double tv_smoothed_value(const Image& x, double eps) {
  if (!(eps > 0.0)) throw DomainError("tv: eps must be > 0");
  const int H = x.height(), W = x.width();
  double total = 0.0;
  for (int ch = 0; ch < x.channels(); ++ch) {
    for (int r = 0; r < H; ++r) {
      for (int c = 0; c < W; ++c) {
        const double v = x(r, c, ch);
        const double dx = x(r, wrap(c + 1, W), ch) - v;
        const double dy = x(wrap(r + 1, H), c, ch) - v;
        total += std::sqrt(dx * dx + dy * dy + eps);
      }
    }
  }
  return total;
}

Image tv_smoothed_grad(const Image& x, double eps) {
  if (!(eps > 0.0)) throw DomainError("tv: eps must be > 0");
  const int H = x.height(), W = x.width();
  Image px(H, W, x.channels()), py(H, W, x.channels());  // dx/s and dy/s per pixel
  for (int ch = 0; ch < x.channels(); ++ch) {
    for (int r = 0; r < H; ++r) {
      for (int c = 0; c < W; ++c) {
        const double v = x(r, c, ch);
        const double dx = x(r, wrap(c + 1, W), ch) - v;
        const double dy = x(wrap(r + 1, H), c, ch) - v;
        const double s = std::sqrt(dx * dx + dy * dy + eps);
        px(r, c, ch) = dx / s;
        py(r, c, ch) = dy / s;
      }
    }
  }
  Image g(H, W, x.channels());
  for (int ch = 0; ch < x.channels(); ++ch) {
    for (int r = 0; r < H; ++r) {
      for (int c = 0; c < W; ++c) {
        g(r, c, ch) = -px(r, c, ch) - py(r, c, ch) + px(r, wrap(c - 1, W), ch) + py(wrap(r - 1, H), c, ch);
      }
    }
  }
  return g;
}

ad::Var tv_smoothed(const ad::Var& x, double eps) {
  const ad::Var dx = ad::roll(x, 0, 1) - x;
  const ad::Var dy = ad::roll(x, 1, 0) - x;
  return ad::sum(ad::sqrt(ad::add_scalar(dx * dx + dy * dy, eps)));
}

ad::Tensor to_tensor(const Image& x) { return ad::Tensor({x.channels(), x.height(), x.width()}, x.array()); }

Image to_image(const ad::Tensor& t) {
  if (t.shape.size() != 3) throw ShapeError("to_image: expected a [C,H,W] tensor, got " + ad::to_string(t.shape));
  return Image(t.shape[1], t.shape[2], t.shape[0], t.data);
}

const char* to_string(RegularizerKind kind) {
  switch (kind) {
    case RegularizerKind::smoothed_tv: return "tv";
    case RegularizerKind::scalar_net: return "deq_s";
    case RegularizerKind::red: return "deq_red";
  }
  return "?";
}

RegularizerKind regularizer_kind_from_string(const std::string& name) {
  if (name == "tv") return RegularizerKind::smoothed_tv;
  if (name == "deq_s") return RegularizerKind::scalar_net;
  if (name == "deq_red") return RegularizerKind::red;
  throw ConfigError("unknown regularizer kind '" + name + "' (expected tv, deq_s or deq_red)");
}

// ---------------------------------------------------------------- layout

void ParamLayout::append(std::string name, ad::Shape shape) {
  const Eigen::Index offset = total();
  slots.push_back({std::move(name), std::move(shape), offset});
}

ad::Tensor ParamVector::tensor(std::size_t slot) const {
  const ParamSlot& s = layout.slots.at(slot);
  return ad::Tensor(s.shape, Eigen::ArrayXd(values.segment(s.offset, s.size())));
}

NetArch NetArch::deq_s() { return {RegularizerKind::scalar_net, {16, 16, 8}, 3, 100.0}; }
NetArch NetArch::deq_red() { return {RegularizerKind::red, {16, 16, 16, 16}, 3, 100.0}; }

const std::vector<std::string>& smooth_primitives() {
  static const std::vector<std::string> list{"conv2d", "add_channel_bias", "softplus", "add", "sub",
                                             "mul",    "scale",            "sum",      "sum_pixels"};
  return list;
}

std::vector<std::string> NetArch::primitives() const {
  std::vector<std::string> p{"conv2d", "add_channel_bias", "softplus"};
  if (kind == RegularizerKind::scalar_net) {
    p.insert(p.end(), {"add", "sum_pixels", "scale", "mul", "sum"});
  } else {
    p.insert(p.end(), {"mul", "sum", "scale", "sub"});
  }
  return p;
}

void NetArch::validate() const {
  if (kind == RegularizerKind::smoothed_tv) throw ConfigError("network arch: tv has no network");
  if (widths.empty()) throw ConfigError("network arch: no hidden layers");
  if (std::any_of(widths.begin(), widths.end(), [](int w) { return w < 1; })) {
    throw ConfigError("network arch: widths must be >= 1");
  }
  if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("network arch: kernel size must be odd");
  if (!(beta > 0.0)) throw ConfigError("network arch: softplus beta must be > 0");
  const auto& ok = smooth_primitives();
  for (const auto& p : primitives()) {
    if (std::find(ok.begin(), ok.end(), p) == ok.end()) {
      throw ConfigError("network arch: primitive '" + p + "' is not smooth");
    }
  }
}

ParamLayout NetArch::layout() const {
  ParamLayout l;
  int in = 1;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    l.append("conv" + std::to_string(i) + ".w", {widths[i], in, kernel_size, kernel_size});
    l.append("conv" + std::to_string(i) + ".b", {widths[i]});
    in = widths[i];
  }
  if (kind == RegularizerKind::scalar_net) {
    l.append("head.w", {in});
    l.append("head.b", {1});
  } else {
    l.append("out.w", {1, in, kernel_size, kernel_size});
    l.append("out.b", {1});
  }
  return l;
}

std::string NetArch::describe() const {
  std::string d = std::string(to_string(kind)) + " k" + std::to_string(kernel_size) + " beta" + std::to_string(beta);
  for (const auto& s : layout().slots) d += " " + s.name + ad::to_string(s.shape);
  return d;
}

std::uint64_t NetArch::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : describe()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

ParamVector init_params(const NetArch& arch, Seed seed) {
  arch.validate();
  ParamVector theta{arch.layout(), {}};
  theta.values = Eigen::ArrayXd::Zero(theta.layout.total());
  Rng rng(seed);
  const auto& slots = theta.layout.slots;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const ParamSlot& s = slots[i];
    if (s.shape.size() == 1 && s.name.ends_with(".b")) continue;
    const Eigen::Index fan_in = s.shape.size() == 4 ? Eigen::Index(s.shape[1]) * s.shape[2] * s.shape[3] : s.size();
    double std_dev = std::sqrt(2.0 / double(fan_in));
    if (i + 2 == slots.size()) std_dev *= 0.1;
    for (Eigen::Index k = 0; k < s.size(); ++k) theta.values[s.offset + k] = std_dev * rng.normal();
  }
  return theta;
}

// ---------------------------------------------------------------- regularizer

Regularizer Regularizer::smoothed_tv(double lambda, double eps) {
  if (!(lambda >= 0.0) || !(eps > 0.0)) throw DomainError("smoothed_tv: need lambda >= 0 and eps > 0");
  Regularizer r;
  r.kind_ = RegularizerKind::smoothed_tv;
  r.lambda_ = lambda;
  r.eps_ = eps;
  return r;
}

Regularizer Regularizer::network(NetArch arch, ParamVector theta) {
  arch.validate();
  Regularizer r;
  r.kind_ = arch.kind;
  r.arch_ = std::move(arch);
  r.set_params(std::move(theta));
  return r;
}

const NetArch& Regularizer::arch() const {
  require_net();
  return arch_;
}

void Regularizer::require_net() const {
  if (!learnable()) throw ConfigError("regularizer: operation needs a network regularizer");
}

void Regularizer::set_params(ParamVector theta) {
  require_net();
  const ParamLayout expected = arch_.layout();
  if (theta.values.size() != expected.total() || theta.layout.slots.size() != expected.slots.size()) {
    throw ShapeError("regularizer: parameter layout does not match " + arch_.describe());
  }
  for (std::size_t i = 0; i < expected.slots.size(); ++i) {
    if (theta.layout.slots[i].shape != expected.slots[i].shape) {
      throw ShapeError("regularizer: slot " + expected.slots[i].name + " has the wrong shape");
    }
  }
  theta_ = std::move(theta);
}

std::vector<ad::Var> Regularizer::param_vars(ad::Tape& tape, bool trainable) const {
  std::vector<ad::Var> vars;
  for (std::size_t i = 0; i < theta_.layout.slots.size(); ++i) {
    vars.push_back(trainable ? tape.variable(theta_.tensor(i)) : tape.constant(theta_.tensor(i)));
  }
  return vars;
}

ad::Var Regularizer::red_residual(const ad::Var& x, const std::vector<ad::Var>& theta) const {
  ad::Var h = x;
  for (std::size_t i = 0; i < arch_.widths.size(); ++i) {
    h = ad::softplus(ad::add_channel_bias(ad::conv2d(h, theta[2 * i]), theta[2 * i + 1]), arch_.beta);
  }
  const std::size_t last = 2 * arch_.widths.size();
  return ad::add_channel_bias(ad::conv2d(h, theta[last]), theta[last + 1]);
}

ad::Var Regularizer::record_channel(const ad::Var& x, const std::vector<ad::Var>& theta) const {
  if (kind_ == RegularizerKind::red) {
    const ad::Var r = red_residual(x, theta);
    return ad::scale(ad::sum(r * r), 0.5);
  }
  ad::Var h = x;
  int in = 1;
  for (std::size_t i = 0; i < arch_.widths.size(); ++i) {
    ad::Var out = ad::softplus(ad::add_channel_bias(ad::conv2d(h, theta[2 * i]), theta[2 * i + 1]), arch_.beta);
    if (arch_.widths[i] == in) out = out + h;
    h = out;
    in = arch_.widths[i];
  }
  const int H = x.shape()[1], W = x.shape()[2];
  const ad::Var pooled = ad::scale(ad::sum_pixels(h), 1.0 / (double(H) * W));
  const std::size_t last = 2 * arch_.widths.size();
  return ad::sum(pooled * theta[last]) + theta[last + 1];
}

ad::Var Regularizer::record(ad::Tape& tape, const ad::Var& x, const std::vector<ad::Var>& theta) const {
  if (x.shape().size() != 3) throw ShapeError("regularizer: expected a [C,H,W] input");
  if (kind_ == RegularizerKind::smoothed_tv) return ad::scale(tv_smoothed(x, eps_), lambda_);
  if (theta.size() != theta_.layout.slots.size()) throw ShapeError("regularizer: wrong number of parameter tensors");
  (void)tape;
  const int C = x.shape()[0];
  if (C == 1) return record_channel(x, theta);
  ad::Var total = record_channel(ad::channel_slice(x, 0), theta);
  for (int c = 1; c < C; ++c) total = total + record_channel(ad::channel_slice(x, c), theta);
  return total;
}

ad::Var Regularizer::record_denoiser(ad::Tape& tape, const ad::Var& x, const std::vector<ad::Var>& theta) const {
  if (kind_ != RegularizerKind::red) throw ConfigError("denoiser: only defined for deq_red");
  (void)tape;
  const int C = x.shape()[0];
  if (C == 1) return x - red_residual(x, theta);
  ad::Var out = ad::channel_embed(red_residual(ad::channel_slice(x, 0), theta), 0, C);
  for (int c = 1; c < C; ++c) out = out + ad::channel_embed(red_residual(ad::channel_slice(x, c), theta), c, C);
  return x - out;
}

double Regularizer::value(const Image& x) const {
  if (kind_ == RegularizerKind::smoothed_tv) return lambda_ * tv_smoothed_value(x, eps_);
  ad::Tape tape;
  return record(tape, tape.constant(to_tensor(x)), param_vars(tape, false)).value().item();
}

std::pair<double, Image> Regularizer::value_and_grad(const Image& x) const {
  if (kind_ == RegularizerKind::smoothed_tv) {
    return {lambda_ * tv_smoothed_value(x, eps_), x.with_data(lambda_ * tv_smoothed_grad(x, eps_).array())};
  }
  ad::Tape tape;
  const ad::Var xv = tape.variable(to_tensor(x));
  const ad::Var r = record(tape, xv, param_vars(tape, false));
  const ad::Var g = tape.gradient(r, std::span<const ad::Var>(&xv, 1))[0];
  return {r.value().item(), to_image(g.value())};
}

Image Regularizer::grad_x(const Image& x) const { return value_and_grad(x).second; }

Image Regularizer::denoise(const Image& x) const {
  ad::Tape tape;
  return to_image(record_denoiser(tape, tape.constant(to_tensor(x)), param_vars(tape, false)).value());
}

ParamVector flatten(const ParamLayout& layout, const std::vector<ad::Var>& grads) {
  if (grads.size() != layout.slots.size()) throw ShapeError("flatten: gradient count does not match layout");
  ParamVector out{layout, Eigen::ArrayXd::Zero(layout.total())};
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const ParamSlot& s = layout.slots[i];
    if (grads[i].value().size() != s.size()) throw ShapeError("flatten: slot " + s.name + " size mismatch");
    out.values.segment(s.offset, s.size()) = grads[i].value().data;
  }
  return out;
}

ParamVector Regularizer::vjp_params(const Image& x, double cotangent) const {
  require_net();
  ad::Tape tape;
  const auto theta = param_vars(tape, true);
  const ad::Var r = record(tape, tape.constant(to_tensor(x)), theta);
  return flatten(theta_.layout, tape.gradient(r, theta, tape.constant(ad::Tensor::scalar(cotangent))));
}

ParamVector Regularizer::vjp_params(const Image& x, const Image& cotangent) const {
  require_net();
  require_same_shape(x, cotangent, "vjp_params");
  ad::Tape tape;
  const auto theta = param_vars(tape, true);
  const ad::Var xv = tape.variable(to_tensor(x));
  const ad::Var r = record(tape, xv, theta);
  const ad::Var g = tape.gradient(r, std::span<const ad::Var>(&xv, 1))[0];
  const ad::Var s = ad::sum(g * tape.constant(to_tensor(cotangent)));
  return flatten(theta_.layout, tape.gradient(s, theta));
}

// ---------------------------------------------------------------- checkpoints

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");
constexpr std::array<char, 4> kParamMagic{'D', 'E', 'Q', 'P'};

}  // namespace

void save_params(const ParamVector& theta, const NetArch& arch, const std::filesystem::path& path) {
  if (theta.size() == 0) throw DomainError("save_params: empty parameter vector");
  if (theta.size() != arch.layout().total()) throw ShapeError("save_params: parameter count does not match arch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const std::uint64_t header[2] = {arch.hash(), static_cast<std::uint64_t>(theta.size())};
  out.write(kParamMagic.data(), 4);
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  out.write(reinterpret_cast<const char*>(theta.values.data()), std::streamsize(theta.size() * sizeof(double)));
  if (!out) throw IoError("write failed: " + path.string());
}

ParamVector load_params(const std::filesystem::path& path, const NetArch& arch) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::array<char, 4> magic{};
  std::uint64_t header[2] = {};
  in.read(magic.data(), 4);
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!in || magic != kParamMagic) throw IoError(path.string() + ": not a DEQP checkpoint");
  if (header[0] != arch.hash()) {
    throw ShapeError(path.string() + ": checkpoint was written for a different architecture than " + arch.describe());
  }
  if (header[1] == 0) throw DomainError(path.string() + ": empty parameter vector");
  ParamVector theta{arch.layout(), {}};
  if (header[1] != static_cast<std::uint64_t>(theta.layout.total())) {
    throw ShapeError(path.string() + ": parameter count does not match arch");
  }
  theta.values.resize(theta.layout.total());
  in.read(reinterpret_cast<char*>(theta.values.data()), std::streamsize(theta.size() * sizeof(double)));
  if (!in) throw IoError(path.string() + ": truncated checkpoint");
  return theta;
}

}  // namespace deqmd
