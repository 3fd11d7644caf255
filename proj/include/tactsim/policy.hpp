// Visuotactile diffusion policy: tactile/vision token encoders, fusion
// into a conditioning vector, a FiLM-conditioned 1-D convolutional
// denoiser over 16x6 action chunks, DDPM training loss and ancestral
// sampling, temporal ensembling, and checkpoint serialization.
#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "tactsim/config.hpp"
#include "tactsim/nn.hpp"
#include "tactsim/pipeline.hpp"

namespace tactsim {

using ChunkMatrix = Eigen::Matrix<double, kChunkSteps, kActionDims>;

// Absolute world-frame pose targets for the next 16 observation ticks.
struct ActionChunk {
  ChunkMatrix poses{ChunkMatrix::Zero()};

  void validate(double max_step_mm = 5.0) const {
    if (!poses.allFinite()) throw PolicyError("action chunk is not finite");
    for (int i = 1; i < kChunkSteps; ++i) {
      const double step = (poses.row(i).head<3>() - poses.row(i - 1).head<3>()).norm();
      if (step > max_step_mm)
        throw PolicyError("action chunk exceeds demonstration-speed bound: " +
                          std::to_string(step) + " mm");
    }
  }
};

enum class PolicyVariant { kVisionOnly, kVisionForce, kVisionTactile, kTactileOnly };

inline const char* toString(PolicyVariant v) {
  switch (v) {
    case PolicyVariant::kVisionOnly: return "vision-only";
    case PolicyVariant::kVisionForce: return "vision+force";
    case PolicyVariant::kVisionTactile: return "vision+tactile";
    case PolicyVariant::kTactileOnly: return "tactile-only";
  }
  return "?";
}

inline PolicyVariant parseVariant(const std::string& s) {
  if (s == "vision-only") return PolicyVariant::kVisionOnly;
  if (s == "vision+force") return PolicyVariant::kVisionForce;
  if (s == "vision+tactile") return PolicyVariant::kVisionTactile;
  if (s == "tactile-only") return PolicyVariant::kTactileOnly;
  throw ConfigError("unknown policy variant: " + s);
}

inline bool usesVision(PolicyVariant v) { return v != PolicyVariant::kTactileOnly; }
inline bool usesTactile(PolicyVariant v) {
  return v == PolicyVariant::kVisionTactile || v == PolicyVariant::kTactileOnly;
}
inline bool usesWrench(PolicyVariant v) { return v == PolicyVariant::kVisionForce; }

struct ObsStep {
  ad::Mat vision{ad::Mat::Zero(64, 64)};  // grayscale raster in [0,1]
  WindowMatrix left{WindowMatrix::Zero()};
  WindowMatrix right{WindowMatrix::Zero()};
  Pose6 proprio;
  Vec6 wrench{Vec6::Zero()};  // grasp-frame, for the vision+force variant
};

// Two most recent observation ticks (oldest first) plus the episode
// anchor pose the proprioception is expressed against.
struct ObservationBundle {
  ObsStep steps[2];
  Pose6 anchor;
};

struct NoiseSchedule {
  int K{100};
  Eigen::VectorXd beta;       // beta[k-1] for step k in [1, K]
  Eigen::VectorXd alpha_bar;  // alpha_bar[k-1], strictly decreasing

  static NoiseSchedule linear(int K, double beta_start, double beta_end) {
    NoiseSchedule s;
    s.K = K;
    s.beta.resize(K);
    s.alpha_bar.resize(K);
    double prod = 1.0;
    for (int i = 0; i < K; ++i) {
      s.beta[i] = K > 1 ? beta_start + (beta_end - beta_start) * i / (K - 1) : beta_start;
      prod *= 1.0 - s.beta[i];
      s.alpha_bar[i] = prod;
    }
    s.validate();
    return s;
  }

  void validate() const {
    if (K < 1 || beta.size() != K || alpha_bar.size() != K)
      throw PolicyError("malformed noise schedule");
    for (int i = 0; i < K; ++i) {
      if (!(beta[i] > 0.0 && beta[i] < 1.0)) throw PolicyError("beta out of (0,1)");
      if (i > 0 && !(beta[i] > beta[i - 1])) throw PolicyError("beta must increase");
      if (i > 0 && !(alpha_bar[i] < alpha_bar[i - 1]))
        throw PolicyError("alpha-bar must strictly decrease");
    }
  }

  double alphaBarAt(int k) const {  // k in [0, K]; alpha_bar(0) = 1
    if (k < 0 || k > K) throw PolicyError("schedule step out of range");
    return k == 0 ? 1.0 : alpha_bar[k - 1];
  }
};

struct PolicyConfig {
  int width{64};
  int heads{4};
  int tactile_layers{2};
  int fusion_layers{2};
  int pooled_tokens{4};
  int cond_dim{512};
  int vision_tokens{8};
  std::vector<int> vision_channels{8, 16, 32, 64};
  std::vector<int> denoiser_widths{32, 64, 64};
  double max_grad_norm{100.0};
  int diffusion_steps{100};
  int inference_steps{16};
  double beta_start{1e-3};
  double beta_end{0.2};
  double ensemble_decay{0.1};
  int train_steps{1200};
  int batch_size{8};
  double learning_rate{1e-3};
  int slice_stride{2};
  double pos_scale_mm{5.0};
  double rot_scale_rad{0.05};
  double force_noise_sigma_n{0.5};

  static PolicyConfig fromConfig(const Config& cfg) {
    PolicyConfig p;
    p.width = cfg.get<int>("policy.width");
    p.heads = cfg.get<int>("policy.heads");
    p.tactile_layers = cfg.get<int>("policy.tactile_layers");
    p.fusion_layers = cfg.get<int>("policy.fusion_layers");
    p.pooled_tokens = cfg.get<int>("policy.pooled_tokens");
    p.cond_dim = cfg.get<int>("policy.cond_dim");
    p.vision_tokens = cfg.get<int>("policy.vision_tokens");
    p.vision_channels = cfg.get<std::vector<int>>("policy.vision_channels");
    p.denoiser_widths = cfg.get<std::vector<int>>("policy.denoiser_widths");
    p.diffusion_steps = cfg.get<int>("policy.diffusion_steps");
    p.inference_steps = cfg.get<int>("policy.inference_steps");
    p.beta_start = cfg.get<double>("policy.beta_start");
    p.beta_end = cfg.get<double>("policy.beta_end");
    p.ensemble_decay = cfg.get<double>("policy.ensemble_decay");
    p.train_steps = cfg.get<int>("policy.train_steps");
    p.batch_size = cfg.get<int>("policy.batch_size");
    p.learning_rate = cfg.get<double>("policy.learning_rate");
    p.max_grad_norm = cfg.get<double>("policy.max_grad_norm");
    p.slice_stride = cfg.get<int>("policy.slice_stride");
    p.pos_scale_mm = cfg.get<double>("policy.pos_scale_mm");
    p.rot_scale_rad = cfg.get<double>("policy.rot_scale_rad");
    p.force_noise_sigma_n = cfg.get<double>("policy.force_noise_sigma_n");
    if (p.vision_channels.size() != 4 || p.denoiser_widths.size() != 3)
      throw ConfigError("policy expects 4 vision channels and 3 denoiser widths");
    return p;
  }
};

// Actions are learned in a normalized space relative to the newest
// proprio sample so the policy cannot memorize absolute workspace
// coordinates.
inline ChunkMatrix normalizeChunk(const ActionChunk& chunk, const Pose6& last_proprio,
                                  const PolicyConfig& cfg) {
  ChunkMatrix n;
  for (int i = 0; i < kChunkSteps; ++i) {
    n.row(i).head<3>() =
        (chunk.poses.row(i).head<3>().transpose() - last_proprio.position) / cfg.pos_scale_mm;
    n.row(i).tail<3>() =
        (chunk.poses.row(i).tail<3>().transpose() - last_proprio.rotation) / cfg.rot_scale_rad;
  }
  return n;
}

inline ActionChunk denormalizeChunk(const ChunkMatrix& n, const Pose6& last_proprio,
                                    const PolicyConfig& cfg) {
  ActionChunk c;
  for (int i = 0; i < kChunkSteps; ++i) {
    c.poses.row(i).head<3>() = n.row(i).head<3>() * cfg.pos_scale_mm +
                               last_proprio.position.transpose();
    c.poses.row(i).tail<3>() = n.row(i).tail<3>() * cfg.rot_scale_rad +
                               last_proprio.rotation.transpose();
  }
  return c;
}

// Exponentially weighted average over every stored chunk that covers
// the queried tick; a chunk emitted at tick e covers ticks e+1..e+16.
inline Pose6 temporalEnsemble(const std::vector<std::pair<long, ActionChunk>>& history,
                              long current_tick, double decay = 0.1) {
  double wsum = 0.0;
  Vec6 acc = Vec6::Zero();
  for (const auto& [emit_tick, chunk] : history) {
    const long idx = current_tick - emit_tick - 1;
    if (idx < 0 || idx >= kChunkSteps) continue;
    const double w = std::exp(-decay * static_cast<double>(idx));
    acc += w * chunk.poses.row(static_cast<int>(idx)).transpose();
    wsum += w;
  }
  if (wsum <= 0.0) throw PolicyError("no action chunk covers the requested tick");
  return Pose6::fromVector(acc / wsum);
}

class PolicyNet {
 public:
  PolicyNet(const PolicyConfig& cfg, PolicyVariant variant, std::uint64_t seed)
      : cfg_(cfg),
        variant_(variant),
        schedule_(NoiseSchedule::linear(cfg.diffusion_steps, cfg.beta_start, cfg.beta_end)),
        store_(seed),
        init_seed_(seed) {
    // Materialize every parameter up front so checkpoints and counts do
    // not depend on which code path ran first.
    ad::Graph g;
    nn::ParamBinder p(g, store_);
    const ObservationBundle warm;
    ChunkMatrix zero = ChunkMatrix::Zero();
    const int cond = fuse(g, p, warm);
    denoise(g, p, ad::constant(g, zero), 1, cond);
  }

  const PolicyConfig& config() const { return cfg_; }
  PolicyVariant variant() const { return variant_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  nn::ParamStore& store() { return store_; }

  // --- graph builders -------------------------------------------------

  int encodeTactile(ad::Graph& g, nn::ParamBinder& p, const WindowMatrix& window) const {
    if (!window.allFinite()) throw PolicyError("non-finite tactile window");
    const int x = ad::constant(g, window);
    int tok = nn::linear(g, p, "tac.proj", x, 6, cfg_.width);
    for (int l = 0; l < cfg_.tactile_layers; ++l)
      tok = nn::transformerBlock(g, p, "tac.block" + std::to_string(l), tok, cfg_.width,
                                 cfg_.heads);
    // Pool the 146 tokens into contiguous-block means.
    return ad::matmul(g, ad::constant(g, blockPool(kWindowRows, cfg_.pooled_tokens)), tok);
  }

  int encodeVision(ad::Graph& g, nn::ParamBinder& p, const ad::Mat& raster) const {
    if (!raster.allFinite() || raster.rows() != 64 || raster.cols() != 64)
      throw PolicyError("vision raster must be a finite 64x64 image");
    ad::Mat flat(1, 64 * 64);
    for (int r = 0; r < 64; ++r)
      for (int c = 0; c < 64; ++c) flat(0, r * 64 + c) = raster(r, c);
    int x = ad::constant(g, flat);
    int cin = 1, side = 64;
    for (int b = 0; b < 4; ++b) {
      const int cout = cfg_.vision_channels[b];
      const std::string name = "vis.conv" + std::to_string(b);
      const int w = p(name + ".w", cout, cin * 9, nn::Init::kFanInCols);
      const int bias = p(name + ".b", cout, 1, nn::Init::kZero);
      x = ad::gelu(g, ad::conv2d(g, x, w, bias, side, side, 3));
      x = ad::avgPool2d(g, x, side, side);
      side /= 2;
      cin = cout;
    }
    // side*side spatial cells grouped into vision_tokens tokens.
    const int tokens =
        ad::matmul(g, ad::constant(g, blockPool(side * side, cfg_.vision_tokens)),
                   ad::transpose(g, x));
    return nn::linear(g, p, "vis.proj", tokens, cin, cfg_.width);
  }

  int encodeWrench(ad::Graph& g, nn::ParamBinder& p, const Vec6& wrench) const {
    ad::Mat row(1, 6);
    row << wrench.transpose();
    return nn::linear(g, p, "frc.proj", ad::constant(g, row), 6, cfg_.width);
  }

  int fuse(ad::Graph& g, nn::ParamBinder& p, const ObservationBundle& bundle) const {
    std::vector<int> tokens;
    for (int s = 0; s < 2; ++s) {
      std::vector<int> step_tokens;
      if (usesVision(variant_))
        step_tokens.push_back(encodeVision(g, p, bundle.steps[s].vision));
      if (usesTactile(variant_)) {
        step_tokens.push_back(encodeTactile(g, p, bundle.steps[s].left));
        step_tokens.push_back(encodeTactile(g, p, bundle.steps[s].right));
      }
      if (usesWrench(variant_)) step_tokens.push_back(encodeWrench(g, p, bundle.steps[s].wrench));
      const int block = ad::concatRows(g, step_tokens);
      const int emb = p("fuse.step" + std::to_string(s), 1, cfg_.width, nn::Init::kFanIn);
      tokens.push_back(ad::addRowVec(g, block, emb));
    }
    int x = ad::concatRows(g, tokens);
    for (int l = 0; l < cfg_.fusion_layers; ++l)
      x = nn::transformerBlock(g, p, "fuse.block" + std::to_string(l), x, cfg_.width, cfg_.heads);
    const int pooled = ad::meanRows(g, x);
    const int feat = nn::linear(g, p, "fuse.out", pooled, cfg_.width, cfg_.cond_dim);

    ad::Mat proprio(1, 12);
    for (int s = 0; s < 2; ++s) {
      proprio.block<1, 3>(0, 6 * s) =
          ((bundle.steps[s].proprio.position - bundle.anchor.position) / cfg_.pos_scale_mm)
              .transpose();
      proprio.block<1, 3>(0, 6 * s + 3) =
          ((bundle.steps[s].proprio.rotation - bundle.anchor.rotation) / cfg_.rot_scale_rad)
              .transpose();
    }
    const int out = ad::concatCols(g, {feat, ad::constant(g, proprio)});
    if (g.val(out).cols() != cfg_.cond_dim + 12)
      throw PolicyError("conditioning vector has the wrong width");
    return out;
  }

  // Predicts the noise on a (16x6) noised chunk node.
  int denoise(ad::Graph& g, nn::ParamBinder& p, int noised_chunk, int k, int cond) const {
    if (k < 1 || k > schedule_.K) throw PolicyError("denoiser step index out of range");
    const int condk = ad::concatCols(g, {cond, ad::constant(g, stepEmbedding(k))});
    const int ck = static_cast<int>(g.val(condk).cols());
    const int w0 = cfg_.denoiser_widths[0], w1 = cfg_.denoiser_widths[1],
              w2 = cfg_.denoiser_widths[2];

    auto block = [&](const std::string& name, int x, int cin, int cout, int kernel) {
      const int w = p(name + ".w", cout, cin * kernel, nn::Init::kFanInCols);
      const int b = p(name + ".b", cout, 1, nn::Init::kZero);
      const int y = ad::conv1d(g, x, w, b, kernel);
      const int film = ad::transpose(
          g, nn::linear(g, p, name + ".film", condk, ck, 2 * cout));
      const int scale_id = ad::sliceRows(g, film, 0, cout);
      const int shift_id = ad::sliceRows(g, film, cout, cout);
      return ad::gelu(g, ad::filmCols(g, y, scale_id, shift_id));
    };

    const int x0 = ad::transpose(g, noised_chunk);  // 6 x 16
    const int d1 = block("den.d1", x0, kActionDims, w0, 3);           // w0 x 16
    const int d2 = block("den.d2", ad::avgPool1d(g, d1), w0, w1, 3);  // w1 x 8
    const int mid = block("den.mid", ad::avgPool1d(g, d2), w1, w2, 3);  // w2 x 4
    const int u2 = block("den.u2", ad::concatRows(g, {ad::upsample1d(g, mid), d2}), w2 + w1, w1,
                         3);  // w1 x 8
    const int u1 = block("den.u1", ad::concatRows(g, {ad::upsample1d(g, u2), d1}), w1 + w0, w0,
                         3);  // w0 x 16
    // Zero-initialized head so the untrained denoiser predicts zero noise.
    const int w_out = p("den.out.w", kActionDims, w0, nn::Init::kZero);
    const int b_out = p("den.out.b", kActionDims, 1, nn::Init::kZero);
    const int out = ad::conv1d(g, u1, w_out, b_out, 1);  // 6 x 16
    const int chunk = ad::transpose(g, out);
    if (g.val(chunk).rows() != kChunkSteps || g.val(chunk).cols() != kActionDims)
      throw PolicyError("denoiser output has the wrong shape");
    return chunk;
  }

  // Eq.-style DDPM objective: squared error between the drawn noise and
  // the predicted noise on the alpha-bar-mixed chunk.
  int ddpmLossNode(ad::Graph& g, nn::ParamBinder& p, const ObservationBundle& bundle,
                   const ChunkMatrix& a0_normalized, int k, const ChunkMatrix& eps) const {
    if (k < 1 || k > schedule_.K) throw PolicyError("diffusion step out of range");
    const double ab = schedule_.alphaBarAt(k);
    const ChunkMatrix noised = std::sqrt(ab) * a0_normalized + std::sqrt(1.0 - ab) * eps;
    const int cond = fuse(g, p, bundle);
    const int pred = denoise(g, p, ad::constant(g, noised), k, cond);
    const int diff = ad::sub(g, ad::constant(g, eps), pred);
    return ad::sumAll(g, ad::cmul(g, diff, diff));
  }

  double ddpmLoss(const ObservationBundle& bundle, const ChunkMatrix& a0_normalized, int k,
                  const ChunkMatrix& eps) {
    ad::Graph g;
    nn::ParamBinder p(g, store_);
    return g.val(ddpmLossNode(g, p, bundle, a0_normalized, k, eps))(0, 0);
  }

  // Ancestral denoising over a strided 16-of-K subsequence.
  ChunkMatrix sampleNormalized(const ObservationBundle& bundle, std::uint64_t seed) {
    Rng rng(seed);
    ChunkMatrix x;
    for (int i = 0; i < kChunkSteps; ++i)
      for (int j = 0; j < kActionDims; ++j) x(i, j) = rng.gaussian();

    const auto ks = stridedSteps();
    for (std::size_t i = 0; i < ks.size(); ++i) {
      const int k = ks[i];
      const int k_prev = i + 1 < ks.size() ? ks[i + 1] : 0;
      ad::Graph g;
      nn::ParamBinder p(g, store_);
      const int cond = fuse(g, p, bundle);
      const int pred = denoise(g, p, ad::constant(g, ChunkMatrix(x)), k, cond);
      const ChunkMatrix eps_hat = g.val(pred);
      if (!eps_hat.allFinite()) throw PolicyError("sampling diverged at step " + std::to_string(k));

      const double ab = schedule_.alphaBarAt(k);
      const double ab_prev = schedule_.alphaBarAt(k_prev);
      const ChunkMatrix x0 = (x - std::sqrt(1.0 - ab) * eps_hat) / std::sqrt(ab);
      const double var = (1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev);
      const double dir = std::sqrt(std::max(1.0 - ab_prev - var, 0.0));
      x = std::sqrt(ab_prev) * x0 + dir * eps_hat;
      if (k_prev > 0) {
        const double sigma = std::sqrt(std::max(var, 0.0));
        for (int r = 0; r < kChunkSteps; ++r)
          for (int c = 0; c < kActionDims; ++c) x(r, c) += sigma * rng.gaussian();
      }
      if (!x.allFinite()) throw PolicyError("sampling diverged at step " + std::to_string(k));
    }
    return x;
  }

  ActionChunk sample(const ObservationBundle& bundle, std::uint64_t seed) {
    return denormalizeChunk(sampleNormalized(bundle, seed), bundle.steps[1].proprio, cfg_);
  }

  // One minibatch gradient step; returns the mean per-pair loss. A
  // non-positive learning rate falls back to the configured one.
  double trainStep(const std::vector<std::pair<ObservationBundle, ChunkMatrix>>& batch,
                   Rng& rng, double learning_rate = 0.0) {
    std::map<std::string, ad::Mat> grad_sum;
    double loss_sum = 0.0;
    for (const auto& [bundle, a0] : batch) {
      ad::Graph g;
      nn::ParamBinder p(g, store_);
      const int k = rng.uniformInt(1, schedule_.K);
      ChunkMatrix eps;
      for (int r = 0; r < kChunkSteps; ++r)
        for (int c = 0; c < kActionDims; ++c) eps(r, c) = rng.gaussian();
      const int loss = ddpmLossNode(g, p, bundle, a0, k, eps);
      loss_sum += g.val(loss)(0, 0);
      g.backward(loss);
      for (auto& [name, grad] : p.grads()) {
        auto it = grad_sum.find(name);
        if (it == grad_sum.end())
          grad_sum.emplace(name, grad);
        else
          it->second += grad;
      }
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (auto& [name, grad] : grad_sum) grad *= inv;
    // Clip the global gradient norm so occasional hard (low-k) draws do
    // not destabilize Adam at practical learning rates.
    double sq = 0.0;
    for (const auto& [name, grad] : grad_sum) sq += grad.squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > cfg_.max_grad_norm) {
      const double s = cfg_.max_grad_norm / norm;
      for (auto& [name, grad] : grad_sum) grad *= s;
    }
    store_.adamStep(grad_sum, learning_rate > 0.0 ? learning_rate : cfg_.learning_rate);
    return loss_sum * inv;
  }

  // --- checkpoints ------------------------------------------------------

  void save(const std::string& path, std::uint64_t config_hash) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataFormatError("cannot open checkpoint for writing: " + path);
    const char magic[4] = {'T', 'S', 'C', 'K'};
    out.write(magic, 4);
    writeU32(out, 1);  // version
    writeU32(out, static_cast<std::uint32_t>(variant_));
    writeU64(out, config_hash);
    writeU64(out, init_seed_);
    const std::string meta = policyJson().dump();
    writeU64(out, meta.size());
    out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    writeU64(out, store_.all().size());
    for (const auto& [name, mat] : store_.all()) {
      writeU64(out, name.size());
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      writeU32(out, static_cast<std::uint32_t>(mat.rows()));
      writeU32(out, static_cast<std::uint32_t>(mat.cols()));
      out.write(reinterpret_cast<const char*>(mat.data()),
                static_cast<std::streamsize>(sizeof(double) * mat.size()));
    }
    if (!out) throw DataFormatError("checkpoint write failed: " + path);
  }

  static PolicyNet load(const std::string& path, std::uint64_t* config_hash_out = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataFormatError("cannot open checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "TSCK", 4) != 0)
      throw DataFormatError("not a checkpoint file: " + path);
    if (readU32(in) != 1) throw DataFormatError("unsupported checkpoint version");
    const auto variant = static_cast<PolicyVariant>(readU32(in));
    const std::uint64_t config_hash = readU64(in);
    const std::uint64_t seed = readU64(in);
    std::string meta(readU64(in), '\0');
    in.read(meta.data(), static_cast<std::streamsize>(meta.size()));
    const Json j = Json::parse(meta);
    Json root = defaultConfig();
    mergeInto(root["policy"], j);
    PolicyNet net(PolicyConfig::fromConfig(Config(root)), variant, seed);
    const std::uint64_t n = readU64(in);
    for (std::uint64_t i = 0; i < n; ++i) {
      std::string name(readU64(in), '\0');
      in.read(name.data(), static_cast<std::streamsize>(name.size()));
      const int rows = static_cast<int>(readU32(in));
      const int cols = static_cast<int>(readU32(in));
      ad::Mat m(rows, cols);
      in.read(reinterpret_cast<char*>(m.data()),
              static_cast<std::streamsize>(sizeof(double) * m.size()));
      auto& slot = net.store_.mutableAll();
      auto it = slot.find(name);
      if (it == slot.end() || it->second.rows() != rows || it->second.cols() != cols)
        throw DataFormatError("checkpoint parameter mismatch: " + name);
      it->second = std::move(m);
    }
    if (!in) throw DataFormatError("truncated checkpoint: " + path);
    if (config_hash_out) *config_hash_out = config_hash;
    return net;
  }

  Json policyJson() const {
    Json j;
    j["width"] = cfg_.width;
    j["heads"] = cfg_.heads;
    j["tactile_layers"] = cfg_.tactile_layers;
    j["fusion_layers"] = cfg_.fusion_layers;
    j["pooled_tokens"] = cfg_.pooled_tokens;
    j["cond_dim"] = cfg_.cond_dim;
    j["vision_tokens"] = cfg_.vision_tokens;
    j["vision_channels"] = cfg_.vision_channels;
    j["denoiser_widths"] = cfg_.denoiser_widths;
    j["diffusion_steps"] = cfg_.diffusion_steps;
    j["inference_steps"] = cfg_.inference_steps;
    j["beta_start"] = cfg_.beta_start;
    j["beta_end"] = cfg_.beta_end;
    j["ensemble_decay"] = cfg_.ensemble_decay;
    j["train_steps"] = cfg_.train_steps;
    j["batch_size"] = cfg_.batch_size;
    j["learning_rate"] = cfg_.learning_rate;
    j["slice_stride"] = cfg_.slice_stride;
    j["pos_scale_mm"] = cfg_.pos_scale_mm;
    j["rot_scale_rad"] = cfg_.rot_scale_rad;
    j["force_noise_sigma_n"] = cfg_.force_noise_sigma_n;
    return j;
  }

  std::vector<int> stridedSteps() const {
    // inference_steps indices from K down toward 1, deduplicated.
    std::vector<int> ks;
    const int n = cfg_.inference_steps;
    for (int i = 0; i < n; ++i) {
      const double t = n > 1 ? static_cast<double>(i) / (n - 1) : 0.0;
      const int k = static_cast<int>(std::lround(schedule_.K - t * (schedule_.K - 1)));
      if (ks.empty() || k < ks.back()) ks.push_back(k);
    }
    return ks;
  }

 private:
  static ad::Mat blockPool(int rows, int groups) {
    ad::Mat m = ad::Mat::Zero(groups, rows);
    for (int r = 0; r < rows; ++r) {
      const int gidx = std::min(groups - 1, r * groups / rows);
      m(gidx, r) = 1.0;
    }
    for (int gidx = 0; gidx < groups; ++gidx) {
      const double s = m.row(gidx).sum();
      if (s > 0.0) m.row(gidx) /= s;
    }
    return m;
  }

  static ad::Mat stepEmbedding(int k) {
    ad::Mat e(1, 32);
    for (int i = 0; i < 16; ++i) {
      const double omega = std::pow(10000.0, -static_cast<double>(i) / 16.0);
      e(0, 2 * i) = std::sin(k * omega);
      e(0, 2 * i + 1) = std::cos(k * omega);
    }
    return e;
  }

  static void writeU32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
  }
  static void writeU64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), 8);
  }
  static std::uint32_t readU32(std::istream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
  }
  static std::uint64_t readU64(std::istream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    return v;
  }

  PolicyConfig cfg_;
  PolicyVariant variant_;
  NoiseSchedule schedule_;
  nn::ParamStore store_;
  std::uint64_t init_seed_;
};

struct TrainResult {
  std::vector<double> loss_curve;  // one entry per step
  double epoch1_mean{0.0};
  double final_mean{0.0};
};

// Minibatch DDPM training over (bundle, normalized chunk) pairs.
// Deterministic given the seed: sampling, noise draws and reduction
// order are all pinned.
inline TrainResult trainPolicy(PolicyNet& net,
                               const std::vector<std::pair<ObservationBundle, ChunkMatrix>>& data,
                               std::uint64_t seed) {
  if (data.empty()) throw PolicyError("training dataset is empty");
  const PolicyConfig& cfg = net.config();
  Rng rng(deriveSeed(seed, 0xabcd));
  TrainResult res;
  const int steps_per_epoch =
      std::max<int>(1, static_cast<int>(data.size()) / std::max(1, cfg.batch_size));
  double epoch1_sum = 0.0;
  int epoch1_count = 0;
  for (int step = 0; step < cfg.train_steps; ++step) {
    std::vector<std::pair<ObservationBundle, ChunkMatrix>> batch;
    batch.reserve(cfg.batch_size);
    for (int b = 0; b < cfg.batch_size; ++b)
      batch.push_back(data[rng.uniformInt(0, static_cast<int>(data.size()) - 1)]);
    const double loss = net.trainStep(batch, rng);
    if (!std::isfinite(loss)) throw PolicyError("training diverged at step " + std::to_string(step));
    res.loss_curve.push_back(loss);
    if (step < steps_per_epoch) {
      epoch1_sum += loss;
      ++epoch1_count;
    }
  }
  res.epoch1_mean = epoch1_sum / std::max(1, epoch1_count);
  // Average the tail over a wider window so the summary is not hostage
  // to the noise of a single minibatch.
  const int tail = std::min<int>(std::max(steps_per_epoch, 50),
                                 static_cast<int>(res.loss_curve.size()));
  double tail_sum = 0.0;
  for (int i = 0; i < tail; ++i) tail_sum += res.loss_curve[res.loss_curve.size() - 1 - i];
  res.final_mean = tail_sum / std::max(1, tail);
  return res;
}

}  // namespace tactsim
