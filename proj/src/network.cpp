#include "ps/network.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace ps {

void NetworkConfig::validate() const {
  if (input_channels < 1) throw std::invalid_argument("config: input_channels < 1");
  if (channels < 1) throw std::invalid_argument("config: channels < 1");
  if (labels < 1) throw std::invalid_argument("config: labels < 1");
  if (d_min <= 0) throw std::invalid_argument("config: d_min <= 0");
  if (feature_stride != 1 && feature_stride != 2 && feature_stride != 4)
    throw std::invalid_argument("config: feature_stride must be 1, 2 or 4");
  if (volume_channels < 1) throw std::invalid_argument("config: volume_channels < 1");
  if (context_channels < 1) throw std::invalid_argument("config: context_channels < 1");
  if (sampling == SamplingMode::UniformDepth && d_max <= d_min)
    throw std::invalid_argument("config: d_max must exceed d_min");
}

std::string NetworkConfig::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "input_channels = " << input_channels << "\n"
     << "channels = " << channels << "\n"
     << "labels = " << labels << "\n"
     << "d_min = " << d_min << "\n"
     << "d_max = " << d_max << "\n"
     << "feature_stride = " << feature_stride << "\n"
     << "cost_variant = " << (cost_variant == CostVariant::Concat ? "concat" : "absdiff")
     << "\n"
     << "aggregation = " << (aggregation ? "on" : "off") << "\n"
     << "sampling = "
     << (sampling == SamplingMode::InverseDepth ? "inverse" : "uniform") << "\n"
     << "volume_channels = " << volume_channels << "\n"
     << "context_channels = " << context_channels << "\n";
  return os.str();
}

NetworkConfig NetworkConfig::from_text(const std::string& text) {
  NetworkConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r") != std::string::npos)
        throw std::invalid_argument("config line " + std::to_string(lineno) +
                                    ": expected key = value");
      continue;
    }
    auto trim = [](std::string s) {
      size_t a = s.find_first_not_of(" \t\r");
      size_t b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key == "input_channels") cfg.input_channels = std::stoi(val);
    else if (key == "channels") cfg.channels = std::stoi(val);
    else if (key == "labels") cfg.labels = std::stoi(val);
    else if (key == "d_min") cfg.d_min = std::stod(val);
    else if (key == "d_max") cfg.d_max = std::stod(val);
    else if (key == "feature_stride") cfg.feature_stride = std::stoi(val);
    else if (key == "cost_variant") {
      if (val == "concat") cfg.cost_variant = CostVariant::Concat;
      else if (val == "absdiff") cfg.cost_variant = CostVariant::AbsDiff;
      else throw std::invalid_argument("config: unknown cost_variant " + val);
    } else if (key == "aggregation") {
      if (val == "on") cfg.aggregation = true;
      else if (val == "off") cfg.aggregation = false;
      else throw std::invalid_argument("config: aggregation must be on/off");
    } else if (key == "sampling") {
      if (val == "inverse") cfg.sampling = SamplingMode::InverseDepth;
      else if (val == "uniform") cfg.sampling = SamplingMode::UniformDepth;
      else throw std::invalid_argument("config: unknown sampling " + val);
    } else if (key == "volume_channels") cfg.volume_channels = std::stoi(val);
    else if (key == "context_channels") cfg.context_channels = std::stoi(val);
    else throw std::invalid_argument("config: unknown key " + key);
  }
  cfg.validate();
  return cfg;
}

NetworkConfig NetworkConfig::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return from_text(ss.str());
}

NetworkConfig NetworkConfig::toy() {
  NetworkConfig cfg;
  cfg.channels = 8;
  cfg.labels = 8;
  cfg.feature_stride = 2;
  cfg.volume_channels = 8;
  cfg.context_channels = 8;
  return cfg;
}

DepthRegression regress_depth(const Tensor& prob,
                              const PlaneHypothesisSet& planes) {
  if (prob.rank() != 3) throw std::invalid_argument("regress_depth: need [L,H,W]");
  int L = prob.dim(0);
  if (L != planes.count())
    throw std::invalid_argument("regress_depth: label count mismatch");
  DepthRegression out;
  std::vector<double> label_values(L);
  for (int l = 0; l < L; ++l) label_values[l] = l + 1;  // 1-based labels
  out.label = label_expectation(prob, label_values);
  if (planes.mode == SamplingMode::InverseDepth) {
    out.depth = mul_scalar(reciprocal(out.label), L * planes.d_min);
  } else {
    out.depth = label_expectation(prob, planes.depths);
  }
  return out;
}

DepthMap ForwardResult::initial_depth_map() const {
  DepthMap m;
  m.height = initial.depth.dim(0);
  m.width = initial.depth.dim(1);
  m.depth = initial.depth.values();
  m.valid.assign(m.depth.size(), 1);
  return m;
}

DepthMap ForwardResult::refined_depth_map() const {
  DepthMap m;
  m.height = refined.depth.dim(0);
  m.width = refined.depth.dim(1);
  m.depth = refined.depth.values();
  m.valid.assign(m.depth.size(), 1);
  return m;
}

Network::Conv Network::make_conv2d(const std::string& name, int out_c, int in_c,
                                   int k, std::mt19937_64* rng) {
  Conv conv;
  int64_t n = static_cast<int64_t>(out_c) * in_c * k * k;
  std::vector<double> w(static_cast<size_t>(n), 0.0);
  if (rng) {
    double std = std::sqrt(2.0 / (static_cast<double>(in_c) * k * k));
    std::normal_distribution<double> dist(0.0, std);
    for (auto& v : w) v = dist(*rng);
  }
  conv.w = Tensor::from_data({out_c, in_c, k, k}, std::move(w), true);
  conv.b = Tensor::zeros({out_c}, true);
  params_.emplace_back(name + ".w", conv.w);
  params_.emplace_back(name + ".b", conv.b);
  return conv;
}

Network::Conv Network::make_conv3d(const std::string& name, int out_c,
                                   int in_c, std::mt19937_64* rng) {
  Conv conv;
  int64_t n = static_cast<int64_t>(out_c) * in_c * 27;
  std::vector<double> w(static_cast<size_t>(n), 0.0);
  if (rng) {
    double std = std::sqrt(2.0 / (static_cast<double>(in_c) * 27));
    std::normal_distribution<double> dist(0.0, std);
    for (auto& v : w) v = dist(*rng);
  }
  conv.w = Tensor::from_data({out_c, in_c, 3, 3, 3}, std::move(w), true);
  conv.b = Tensor::zeros({out_c}, true);
  params_.emplace_back(name + ".w", conv.w);
  params_.emplace_back(name + ".b", conv.b);
  return conv;
}

Network::Network(const NetworkConfig& config, uint64_t init_seed)
    : config_(config) {
  config_.validate();
  std::mt19937_64 rng(init_seed);

  int c1 = std::max(1, config_.channels / 2);
  int c2 = config_.channels;
  int enc_channels[7] = {c1, c1, c1, c2, c2, c2, c2};
  enc_strides_ = {1, 1, 1, 1, 1, 1, 1};
  if (config_.feature_stride >= 2) enc_strides_[0] = 2;
  if (config_.feature_stride == 4) enc_strides_[3] = 2;

  int in_c = config_.input_channels;
  for (int i = 0; i < 7; ++i) {
    int k = i == 0 ? 7 : 3;
    encoder_.push_back(make_conv2d("enc" + std::to_string(i + 1),
                                   enc_channels[i], in_c, k, &rng));
    in_c = enc_channels[i];
  }
  fuse1_ = make_conv2d("fuse1", c2, 5 * c2, 3, &rng);
  fuse2_ = make_conv2d("fuse2", config_.channels, c2, 3, &rng);

  int raw_c = config_.cost_variant == CostVariant::Concat ? 2 * config_.channels
                                                          : config_.channels;
  int c3 = config_.volume_channels;
  vol_entry_ = make_conv3d("vol.entry", c3, raw_c, &rng);
  vol_res_[0] = make_conv3d("vol.res1a", c3, c3, &rng);
  vol_res_[1] = make_conv3d("vol.res1b", c3, c3, &rng);
  vol_res_[2] = make_conv3d("vol.res2a", c3, c3, &rng);
  vol_res_[3] = make_conv3d("vol.res2b", c3, c3, &rng);
  vol_head_ = make_conv3d("vol.head", 1, c3, &rng);

  int cc = config_.context_channels;
  int ctx_in = config_.channels + 1;
  for (int i = 0; i < 7; ++i) {
    int out_c = i == 6 ? 1 : cc;
    // Final context conv starts at zero so aggregation begins as identity.
    std::mt19937_64* r = i == 6 ? nullptr : &rng;
    context_.push_back(
        make_conv2d("ctx" + std::to_string(i + 1), out_c, ctx_in, 3, r));
    ctx_in = cc;
  }
}

Tensor Network::parameter(const std::string& name) const {
  for (const auto& [n, t] : params_)
    if (n == name) return t;
  throw std::invalid_argument("no parameter named " + name);
}

Tensor Network::extract_features(const Tensor& image) const {
  if (image.rank() != 3 || image.dim(0) != config_.input_channels)
    throw std::invalid_argument("extract_features: image must be [" +
                                std::to_string(config_.input_channels) +
                                ",H,W]");
  int H = image.dim(1), W = image.dim(2);
  int s = config_.feature_stride;
  if (H % s != 0 || W % s != 0) {
    int pad_h = (s - H % s) % s, pad_w = (s - W % s) % s;
    throw std::invalid_argument(
        "extract_features: " + std::to_string(W) + "x" + std::to_string(H) +
        " not divisible by stride " + std::to_string(s) + "; pad to " +
        std::to_string(W + pad_w) + "x" + std::to_string(H + pad_h));
  }

  Tensor x = reshape(image, {1, config_.input_channels, H, W});
  for (int i = 0; i < 7; ++i) {
    int k = i == 0 ? 7 : 3;
    x = relu(conv2d(x, encoder_[i].w, encoder_[i].b, enc_strides_[i], 1, k / 2));
  }
  int h = x.dim(2), w = x.dim(3);

  // Pyramid pooling: four window sizes, each branch upsampled back.
  std::vector<Tensor> parts{x};
  for (int window : {16, 8, 4, 2})
    parts.push_back(upsample_bilinear2d(avg_pool2d(x, window), h, w));
  Tensor cat = concat(parts, 1);
  Tensor fused = relu(conv2d(cat, fuse1_.w, fuse1_.b, 1, 1, 1));
  fused = conv2d(fused, fuse2_.w, fuse2_.b, 1, 1, 1);  // head: no activation
  return reshape(fused, {config_.channels, h, w});
}

Tensor Network::build_cost_volume(const Tensor& ref_features,
                                  const Tensor& paired_features,
                                  const WarpGrid& grid) const {
  if (ref_features.shape() != paired_features.shape())
    throw std::invalid_argument("build_cost_volume: feature shape mismatch");
  int h = ref_features.dim(1), w = ref_features.dim(2);
  if (grid.height != h || grid.width != w)
    throw std::invalid_argument("build_cost_volume: grid resolution mismatch");
  Tensor warped = grid_sample_bilinear(paired_features, grid.coords,
                                       grid.in_bounds, grid.planes, h, w);
  Tensor ref_b = broadcast_labels(ref_features, grid.planes);
  if (config_.cost_variant == CostVariant::Concat)
    return concat({ref_b, warped}, 0);
  return abs(sub(ref_b, warped));
}

Tensor Network::regularize(const Tensor& raw_volume, bool linear_probe) const {
  if (raw_volume.rank() != 4)
    throw std::invalid_argument("regularize: need [C,L,h,w]");
  int C = raw_volume.dim(0), L = raw_volume.dim(1), h = raw_volume.dim(2),
      w = raw_volume.dim(3);
  auto act = [linear_probe](Tensor t) { return linear_probe ? t : relu(t); };
  auto bias = [linear_probe](const Conv& c) { return linear_probe ? Tensor() : c.b; };
  Tensor x = reshape(raw_volume, {1, C, L, h, w});
  x = act(conv3d(x, vol_entry_.w, bias(vol_entry_), 1, 1));
  for (int block = 0; block < 2; ++block) {
    Tensor y = act(conv3d(x, vol_res_[2 * block].w, bias(vol_res_[2 * block]), 1, 1));
    y = conv3d(y, vol_res_[2 * block + 1].w, bias(vol_res_[2 * block + 1]), 1, 1);
    x = add(x, y);  // residual sum, no activation
  }
  x = conv3d(x, vol_head_.w, bias(vol_head_), 1, 1);
  return reshape(x, {L, h, w});
}

Tensor Network::aggregation_residual(const Tensor& initial_volume,
                                     const Tensor& ref_features) const {
  if (initial_volume.rank() != 3)
    throw std::invalid_argument("aggregation_residual: need [L,h,w]");
  int L = initial_volume.dim(0), h = initial_volume.dim(1),
      w = initial_volume.dim(2);
  if (ref_features.dim(1) != h || ref_features.dim(2) != w)
    throw std::invalid_argument("aggregation_residual: context size mismatch");
  Tensor slices = reshape(initial_volume, {L, 1, h, w});
  // Same context features for every slice; the batch axis carries labels so
  // all slices share the conv weights.
  Tensor ctx = reshape(ref_features, {1, config_.channels, h, w});
  Tensor ctx_batch = concat(std::vector<Tensor>(L, ctx), 0);
  Tensor x = concat({slices, ctx_batch}, 1);
  static constexpr int kDilations[7] = {1, 2, 4, 8, 16, 1, 1};
  for (int i = 0; i < 7; ++i) {
    int d = kDilations[i];
    x = conv2d(x, context_[i].w, context_[i].b, 1, d, d);
    if (i < 6) x = relu(x);
  }
  return reshape(x, {L, h, w});
}

ForwardResult Network::forward(const Tensor& ref_image,
                               const std::vector<Tensor>& paired_images,
                               const CameraIntrinsics& intrinsics,
                               const std::vector<CameraPose>& paired_poses) const {
  if (paired_images.empty())
    throw std::invalid_argument("forward: need at least one paired view");
  if (paired_images.size() != paired_poses.size())
    throw std::invalid_argument("forward: image/pose count mismatch");

  int H = ref_image.dim(1), W = ref_image.dim(2);
  int s = config_.feature_stride;
  Tensor ref_feat = extract_features(ref_image);
  int h = ref_feat.dim(1), w = ref_feat.dim(2);

  CameraIntrinsics K_f = scale_intrinsics(intrinsics, 1.0 / s, 1.0 / s);
  PlaneHypothesisSet planes = sample_planes(config_.labels, config_.d_min,
                                            config_.sampling, config_.d_max);

  ForwardResult result;
  result.planes = planes;

  Tensor acc;
  int n_views = static_cast<int>(paired_images.size());
  for (int i = 0; i < n_views; ++i) {
    Tensor feat = extract_features(paired_images[i]);
    WarpGrid grid = compute_warp_grid(K_f, paired_poses[i], planes, w, h);
    Tensor raw = build_cost_volume(ref_feat, feat, grid);
    result.raw_volumes.push_back(raw);
    result.masks.push_back(grid.in_bounds);
    Tensor reg = regularize(raw);
    acc = i == 0 ? reg : add(acc, reg);
  }
  // Per-view volumes are regularized with shared weights, then averaged.
  result.initial_volume =
      n_views == 1 ? acc : mul_scalar(acc, 1.0 / n_views);

  if (config_.aggregation) {
    result.residual_volume = aggregation_residual(result.initial_volume, ref_feat);
    result.refined_volume = add(result.initial_volume, result.residual_volume);
  } else {
    result.residual_volume = Tensor::zeros({config_.labels, h, w});
    result.refined_volume = result.initial_volume;
  }

  // Pre-softmax volumes go up to image resolution, then softmax + readout.
  Tensor up_init = upsample_bilinear2d(result.initial_volume, H, W);
  Tensor up_ref = config_.aggregation
                      ? upsample_bilinear2d(result.refined_volume, H, W)
                      : up_init;
  result.prob_initial = softmax(up_init, 0);
  result.prob_refined = config_.aggregation ? softmax(up_ref, 0)
                                            : result.prob_initial;
  result.initial = regress_depth(result.prob_initial, planes);
  result.refined = config_.aggregation ? regress_depth(result.prob_refined, planes)
                                       : result.initial;
  return result;
}

namespace {
constexpr char kCheckpointMagic[8] = {'P', 'S', 'C', 'K', 'P', 'T', '1', '\n'};

void write_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
uint32_t read_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw std::runtime_error("checkpoint: truncated");
  return v;
}
}  // namespace

void Network::save_checkpoint(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot write " + path);
  f.write(kCheckpointMagic, sizeof kCheckpointMagic);
  std::string cfg = config_.to_text();
  write_u32(f, static_cast<uint32_t>(cfg.size()));
  f.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  write_u32(f, static_cast<uint32_t>(params_.size()));
  for (const auto& [name, tensor] : params_) {
    write_u32(f, static_cast<uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(f, tensor);
  }
}

Network Network::load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  f.read(magic, sizeof magic);
  if (!f || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  uint32_t cfg_len = read_u32(f);
  std::string cfg_text(cfg_len, '\0');
  f.read(cfg_text.data(), cfg_len);
  if (!f) throw std::runtime_error("checkpoint: truncated config");
  Network net(NetworkConfig::from_text(cfg_text), 0);
  uint32_t count = read_u32(f);
  if (count != net.params_.size())
    throw std::runtime_error("checkpoint: parameter count mismatch");
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len = read_u32(f);
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    if (!f) throw std::runtime_error("checkpoint: truncated name");
    Tensor stored = read_tensor(f);
    Tensor param = net.parameter(name);
    if (stored.shape() != param.shape())
      throw std::runtime_error("checkpoint: shape mismatch for " + name);
    param.values() = stored.values();
  }
  return net;
}

}  // namespace ps
