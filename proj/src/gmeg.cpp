#include "gmixseq/gmeg.hpp"

#include <cmath>
#include <numeric>

namespace gmixseq {

namespace {

Rng init_rng(const GmegConfig& cfg) { return Rng(cfg.init_seed); }

}  // namespace

GmegModel::GmegModel(GmegConfig cfg, LossWeights weights) : cfg_(cfg), weights_(weights) {
  if (cfg_.k < 1) throw std::invalid_argument("GmegModel: k must be >= 1");
  if (cfg_.n_speakers < 1) throw std::invalid_argument("GmegModel: need at least one speaker");
  Rng rng = init_rng(cfg_);
  expr_in_ = Linear(cfg_.d_beta, cfg_.encoder.model_dim, rng);
  audio_enc_in_ = Linear(cfg_.d_audio, cfg_.encoder.model_dim, rng);
  encoder_ = EncoderStack(cfg_.encoder, rng);
  head_mu_z_ = Linear(cfg_.encoder.model_dim, cfg_.d_z, rng);
  head_logvar_z_ = Linear(cfg_.encoder.model_dim, cfg_.d_z, rng);
  head_mu_w_ = Linear(cfg_.encoder.model_dim, cfg_.d_w, rng);
  head_logvar_w_ = Linear(cfg_.encoder.model_dim, cfg_.d_w, rng);

  w_in_ = Linear(cfg_.d_w, cfg_.mapper.model_dim, rng);
  comp_tokens_ = Param(rng.normal_matrix(cfg_.k, cfg_.mapper.model_dim, 0.5));
  mapper_ = EncoderStack(cfg_.mapper, rng);
  head_comp_mu_ = Linear(cfg_.mapper.model_dim, cfg_.d_z, rng);
  head_comp_logvar_ = Linear(cfg_.mapper.model_dim, cfg_.d_z, rng);

  prev_in_ = Linear(cfg_.d_beta, cfg_.decoder.model_dim, rng);
  lat_in_ = Linear(cfg_.d_z, cfg_.decoder.model_dim, rng);
  mem_in_ = Linear(cfg_.d_audio, cfg_.decoder.model_dim, rng);
  if (cfg_.unimodal_baseline) emo_in_ = Linear(cfg_.k, cfg_.decoder.model_dim, rng);
  decoder_ = DecoderStack(cfg_.decoder, rng);
  out_ = Linear(cfg_.decoder.model_dim, cfg_.d_beta, rng);

  speaker_embed_.reserve(static_cast<std::size_t>(cfg_.n_speakers));
  for (int s = 0; s < cfg_.n_speakers; ++s) speaker_embed_.emplace_back(Matrix::Zero(1, cfg_.d_beta));
}

void GmegModel::check_speaker(int speaker) const {
  if (speaker < 0 || speaker >= static_cast<int>(speaker_embed_.size()))
    throw std::invalid_argument("GmegModel: unknown speaker id " + std::to_string(speaker));
}

GmegPosterior GmegModel::encode(Tape& tape, const Tensor& beta, const Matrix& audio) {
  if (beta.rows() != audio.rows())
    throw std::invalid_argument("GmegModel::encode: expression/audio length mismatch");
  if (beta.cols() != cfg_.d_beta || audio.cols() != cfg_.d_audio)
    throw std::invalid_argument("GmegModel::encode: wrong feature dimension");
  Tensor x = add(expr_in_.forward(tape, beta), audio_enc_in_.forward(tape, tape.constant(audio)));
  x = add(x, tape.constant(positional_encoding(beta.rows(), cfg_.encoder.model_dim)));
  Tensor pooled = mean_rows(encoder_.forward(tape, x));
  GmegPosterior post;
  post.z = {head_mu_z_.forward(tape, pooled), head_logvar_z_.forward(tape, pooled)};
  post.w = {head_mu_w_.forward(tape, pooled), head_logvar_w_.forward(tape, pooled)};
  return post;
}

GmegPosterior GmegModel::encode(Tape& tape, const Matrix& beta, const Matrix& audio) {
  return encode(tape, tape.constant(beta), audio);
}

MixtureParams GmegModel::mog_map(Tape& tape, const Tensor& w) {
  if (w.rows() != 1 || w.cols() != cfg_.d_w) throw std::invalid_argument("GmegModel::mog_map: w must be 1 x d_w");
  // One token per component: learned token plus the projected w, encoded
  // without positional input (component order is not a sequence).
  Tensor tokens = add(tape.param(comp_tokens_), w_in_.forward(tape, w));
  Tensor h = mapper_.forward(tape, tokens);
  Tensor mus = head_comp_mu_.forward(tape, h);
  Tensor logvars = head_comp_logvar_.forward(tape, h);
  MixtureParams mix;
  mix.weights = MixtureParams::uniform_weights(cfg_.k);
  mix.components.reserve(static_cast<std::size_t>(cfg_.k));
  for (int k = 0; k < cfg_.k; ++k)
    mix.components.push_back({slice_rows(mus, k, 1), slice_rows(logvars, k, 1)});
  return mix;
}

MixtureValues GmegModel::mog_map_values(const Matrix& w) {
  Tape tape;
  return MixtureValues::from(mog_map(tape, tape.constant(w)));
}

Tensor GmegModel::decoder_inputs(Tape& tape, const Tensor& z, const Tensor& prev, const Matrix* label_vec) {
  Tensor emb = add(prev_in_.forward(tape, prev), lat_in_.forward(tape, z));
  emb = add(emb, tape.constant(positional_encoding(prev.rows(), cfg_.decoder.model_dim)));
  if (cfg_.unimodal_baseline) {
    if (label_vec == nullptr)
      throw std::invalid_argument("GmegModel: baseline decoder needs an emotion label vector");
    emb = add(emb, emo_in_.forward(tape, tape.constant(*label_vec)));
  }
  return emb;
}

Tensor GmegModel::audio_memory(Tape& tape, const Matrix& audio) {
  Tensor mem = mem_in_.forward(tape, tape.constant(audio));
  return add(mem, tape.constant(positional_encoding(audio.rows(), cfg_.decoder.model_dim)));
}

Tensor GmegModel::decode_teacher(Tape& tape, const Tensor& z, const Tensor& beta, const Matrix& audio,
                                 int speaker, const Matrix* label_vec, const Matrix* prev_keep) {
  check_speaker(speaker);
  const Eigen::Index t = beta.rows();
  if (t != audio.rows()) throw std::invalid_argument("GmegModel::decode_teacher: length mismatch");
  // Shifted teacher input: the speaker embedding stands in for frame -1.
  Tensor start = tape.param(speaker_embed_[static_cast<std::size_t>(speaker)]);
  Tensor prev = t > 1 ? concat_rows({start, slice_rows(beta, 0, t - 1)}) : start;
  if (prev_keep != nullptr) {
    if (prev_keep->rows() != t || prev_keep->cols() != cfg_.d_beta)
      throw std::invalid_argument("GmegModel::decode_teacher: prev_keep must be T x d_beta");
    prev = mul(prev, tape.constant(*prev_keep));
  }
  Tensor emb = decoder_inputs(tape, z, prev, label_vec);
  Tensor h = decoder_.forward(tape, emb, audio_memory(tape, audio));
  return out_.forward(tape, h);
}

Matrix GmegModel::decode(const Matrix& z, const Matrix& audio, int speaker, const Matrix* label_vec) {
  check_speaker(speaker);
  const Eigen::Index t = audio.rows();
  if (t < 1) throw std::invalid_argument("GmegModel::decode: empty audio");
  Matrix result(t, cfg_.d_beta);
  Matrix prev(t, cfg_.d_beta);
  prev.row(0) = speaker_embed_[static_cast<std::size_t>(speaker)].value.row(0);
  for (Eigen::Index step = 1; step <= t; ++step) {
    Tape tape;
    Tensor emb = decoder_inputs(tape, tape.constant(z), tape.constant(Matrix(prev.topRows(step))), label_vec);
    Tensor h = decoder_.forward(tape, emb, audio_memory(tape, Matrix(audio.topRows(step))));
    Tensor frame = out_.forward(tape, slice_rows(h, step - 1, 1));
    result.row(step - 1) = frame.value().row(0);
    if (step < t) prev.row(step) = result.row(step - 1);
  }
  return result;
}

GmegLossTerms GmegModel::loss(Tape& tape, const Matrix& beta, const Matrix& audio, int label, int speaker,
                              const Matrix& noise_w, const Matrix& noise_z, CondWeighting weighting,
                              const Matrix* prev_keep) {
  return loss(tape, tape.constant(beta), audio, label, speaker, noise_w, noise_z, weighting, prev_keep);
}

GmegLossTerms GmegModel::loss(Tape& tape, const Tensor& beta_t, const Matrix& audio, int label, int speaker,
                              const Matrix& noise_w, const Matrix& noise_z, CondWeighting weighting,
                              const Matrix* prev_keep) {
  if (label < 0 || label >= cfg_.k) throw std::invalid_argument("GmegModel::loss: label out of range");
  GmegPosterior post = encode(tape, beta_t, audio);
  Tensor w = reparam_sample(post.w, tape.constant(noise_w));
  Tensor z = reparam_sample(post.z, tape.constant(noise_z));

  const Matrix label_vec = label_blend(label, label, 1.0);
  Tensor recon =
      decode_teacher(tape, z, beta_t, audio, speaker, cfg_.unimodal_baseline ? &label_vec : nullptr, prev_keep);
  Tensor diff = sub(recon, beta_t);
  Tensor rec = mean(mul(diff, diff));

  GmegLossTerms terms;
  terms.rec = rec;
  if (cfg_.unimodal_baseline) {
    terms.cond = kl_to_std_normal(post.z);
    terms.w = tape.constant(0.0);
    terms.emo = tape.constant(0.0);
  } else {
    MixtureParams mix = mog_map(tape, w);
    std::vector<Tensor> comp_lp;
    comp_lp.reserve(mix.components.size());
    for (const auto& comp : mix.components) comp_lp.push_back(log_pdf(comp, z));
    Tensor comp_row = concat_cols(std::span<const Tensor>(comp_lp.data(), comp_lp.size()));

    Tensor log_q_z = log_pdf(post.z, z);
    Tensor prior_term;
    if (weighting == CondWeighting::LabelSelected) {
      prior_term = comp_lp[static_cast<std::size_t>(label)];
    } else {
      // Uniform weights shift every logit equally, so the responsibilities
      // are the softmax of the bare component log-densities.
      prior_term = sum(mul(softmax(comp_row, 1), comp_row));
    }
    terms.cond = sub(log_q_z, prior_term);
    terms.w = kl_to_std_normal(post.w);
    terms.emo = kl_categorical_to_uniform_from_logits(comp_row);
  }
  terms.total = add(add(scale(terms.rec, weights_.rec), scale(terms.cond, weights_.cond)),
                    add(scale(terms.w, weights_.w), scale(terms.emo, weights_.emo)));
  return terms;
}

Matrix GmegModel::label_blend(int e1, int e2, double alpha) const {
  if (e1 < 0 || e1 >= cfg_.k || e2 < 0 || e2 >= cfg_.k)
    throw std::invalid_argument("GmegModel: emotion label out of range");
  Matrix v = Matrix::Zero(1, cfg_.k);
  v(0, e1) += alpha;
  v(0, e2) += 1.0 - alpha;
  return v;
}

Matrix GmegModel::sample_latent(int label, const Matrix& noise_w, const Matrix& noise_z) {
  if (label < 0 || label >= cfg_.k) throw std::invalid_argument("GmegModel::sample_latent: label out of range");
  if (cfg_.unimodal_baseline) return noise_z;  // unimodal N(0,I) prior
  MixtureValues mix = mog_map_values(noise_w);
  return reparam_sample(mix.components[static_cast<std::size_t>(label)], noise_z);
}

Matrix GmegModel::interpolate_latent(int e1, int e2, double alpha, const Matrix& noise_w, const Matrix& noise_z,
                                     InterpolationMode mode, double mixture_u) {
  if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("GmegModel::interpolate_latent: alpha outside [0,1]");
  if (alpha == 1.0) return sample_latent(e1, noise_w, noise_z);
  if (alpha == 0.0) return sample_latent(e2, noise_w, noise_z);
  if (cfg_.unimodal_baseline) return noise_z;

  MixtureValues mix = mog_map_values(noise_w);
  const auto& c1 = mix.components[static_cast<std::size_t>(e1)];
  const auto& c2 = mix.components[static_cast<std::size_t>(e2)];
  if (mode == InterpolationMode::MixtureSample)
    return reparam_sample(mixture_u < alpha ? c1 : c2, noise_z);

  Matrix mean = alpha * c1.mean + (1.0 - alpha) * c2.mean;
  Matrix var = alpha * c1.log_var.array().exp().matrix() + (1.0 - alpha) * c2.log_var.array().exp().matrix();
  return mean + var.cwiseSqrt().cwiseProduct(noise_z);
}

Matrix GmegModel::generate(const Matrix& audio, int label, int speaker, const Matrix& noise_w,
                           const Matrix& noise_z) {
  const Matrix z = sample_latent(label, noise_w, noise_z);
  const Matrix label_vec = label_blend(label, label, 1.0);
  return decode(z, audio, speaker, cfg_.unimodal_baseline ? &label_vec : nullptr);
}

Matrix GmegModel::generate_interpolated(const Matrix& audio, int e1, int e2, double alpha, int speaker,
                                        const Matrix& noise_w, const Matrix& noise_z, InterpolationMode mode,
                                        double mixture_u) {
  const Matrix z = interpolate_latent(e1, e2, alpha, noise_w, noise_z, mode, mixture_u);
  const Matrix label_vec = label_blend(e1, e2, alpha);
  return decode(z, audio, speaker, cfg_.unimodal_baseline ? &label_vec : nullptr);
}

NamedParams GmegModel::params() {
  NamedParams out;
  expr_in_.collect(out, "enc.expr_in");
  audio_enc_in_.collect(out, "enc.audio_in");
  encoder_.collect(out, "enc.stack");
  head_mu_z_.collect(out, "enc.mu_z");
  head_logvar_z_.collect(out, "enc.logvar_z");
  head_mu_w_.collect(out, "enc.mu_w");
  head_logvar_w_.collect(out, "enc.logvar_w");
  w_in_.collect(out, "map.w_in");
  out.emplace_back("map.tokens", &comp_tokens_);
  mapper_.collect(out, "map.stack");
  head_comp_mu_.collect(out, "map.mu");
  head_comp_logvar_.collect(out, "map.logvar");
  prev_in_.collect(out, "dec.prev_in");
  lat_in_.collect(out, "dec.lat_in");
  mem_in_.collect(out, "dec.mem_in");
  if (cfg_.unimodal_baseline) emo_in_.collect(out, "dec.emo_in");
  decoder_.collect(out, "dec.stack");
  out_.collect(out, "dec.out");
  for (std::size_t s = 0; s < speaker_embed_.size(); ++s)
    out.emplace_back("dec.speaker" + std::to_string(s), &speaker_embed_[s]);
  return out;
}

std::map<std::string, double> GmegModel::hparams() const {
  std::map<std::string, double> h;
  h["d_beta"] = cfg_.d_beta;
  h["d_audio"] = cfg_.d_audio;
  h["k"] = cfg_.k;
  h["d_z"] = cfg_.d_z;
  h["d_w"] = cfg_.d_w;
  h["n_speakers"] = cfg_.n_speakers;
  h["unimodal_baseline"] = cfg_.unimodal_baseline ? 1.0 : 0.0;
  h["init_seed"] = static_cast<double>(cfg_.init_seed);
  auto stack = [&](const char* name, const StackConfig& s) {
    h[std::string(name) + ".layers"] = s.n_layers;
    h[std::string(name) + ".dim"] = s.model_dim;
    h[std::string(name) + ".heads"] = s.n_heads;
    h[std::string(name) + ".ff"] = s.ff_dim;
  };
  stack("encoder", cfg_.encoder);
  stack("mapper", cfg_.mapper);
  stack("decoder", cfg_.decoder);
  h["w.rec"] = weights_.rec;
  h["w.cond"] = weights_.cond;
  h["w.w"] = weights_.w;
  h["w.emo"] = weights_.emo;
  return h;
}

GmegConfig GmegModel::config_from_hparams(const std::map<std::string, double>& h) {
  GmegConfig cfg;
  auto get = [&](const char* key) {
    auto it = h.find(key);
    if (it == h.end()) throw std::runtime_error(std::string("checkpoint: missing hyperparameter ") + key);
    return it->second;
  };
  cfg.d_beta = static_cast<int>(get("d_beta"));
  cfg.d_audio = static_cast<int>(get("d_audio"));
  cfg.k = static_cast<int>(get("k"));
  cfg.d_z = static_cast<int>(get("d_z"));
  cfg.d_w = static_cast<int>(get("d_w"));
  cfg.n_speakers = static_cast<int>(get("n_speakers"));
  cfg.unimodal_baseline = get("unimodal_baseline") != 0.0;
  cfg.init_seed = static_cast<std::uint64_t>(get("init_seed"));
  auto stack = [&](const char* name, StackConfig& s) {
    s.n_layers = static_cast<int>(get((std::string(name) + ".layers").c_str()));
    s.model_dim = static_cast<int>(get((std::string(name) + ".dim").c_str()));
    s.n_heads = static_cast<int>(get((std::string(name) + ".heads").c_str()));
    s.ff_dim = static_cast<int>(get((std::string(name) + ".ff").c_str()));
  };
  stack("encoder", cfg.encoder);
  stack("mapper", cfg.mapper);
  stack("decoder", cfg.decoder);
  return cfg;
}

TrainLog train_gmeg(GmegModel& model, const SyntheticCorpus& corpus, const TrainConfig& cfg, Adam& opt,
                    const EpochHook& on_epoch) {
  if (corpus.sequences.empty()) throw std::invalid_argument("train_gmeg: empty corpus");
  if (corpus.kind != CorpusKind::Emotion) throw std::invalid_argument("train_gmeg: needs an emotion corpus");

  Rng shuffle_rng = Rng(cfg.seed).fork(1);
  Rng train_noise = Rng(cfg.seed).fork(2);
  Rng eval_noise_rng = Rng(cfg.seed).fork(3);

  const int d_w = model.config().d_w;
  const int d_z = model.config().d_z;
  std::vector<std::pair<Matrix, Matrix>> eval_noise;
  eval_noise.reserve(corpus.sequences.size());
  for (std::size_t i = 0; i < corpus.sequences.size(); ++i)
    eval_noise.emplace_back(eval_noise_rng.normal_matrix(1, d_w), eval_noise_rng.normal_matrix(1, d_z));

  auto evaluate = [&]() {
    std::vector<double> acc(5, 0.0);
    for (std::size_t i = 0; i < corpus.sequences.size(); ++i) {
      const Sequence& s = corpus.sequences[i];
      Tape tape;
      GmegLossTerms t = model.loss(tape, s.coef, s.audio, s.label, s.speaker, eval_noise[i].first,
                                   eval_noise[i].second, cfg.weighting);
      acc[0] += t.total.scalar();
      acc[1] += t.rec.scalar();
      acc[2] += t.cond.scalar();
      acc[3] += t.w.scalar();
      acc[4] += t.emo.scalar();
    }
    for (double& v : acc) v /= static_cast<double>(corpus.sequences.size());
    return acc;
  };

  TrainLog log;
  log.push_back({0, evaluate()});
  if (on_epoch) on_epoch(0, log.back());

  std::vector<std::size_t> order(corpus.sequences.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    try {
      shuffle_rng.shuffle(order);
      for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch_size)) {
        const std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(cfg.batch_size));
        opt.zero_grad();
        Tape tape;
        Tensor batch_loss;
        for (std::size_t i = at; i < end; ++i) {
          const Sequence& s = corpus.sequences[order[i]];
          const Matrix noise_w = train_noise.normal_matrix(1, d_w);
          const Matrix noise_z = train_noise.normal_matrix(1, d_z);
          Matrix keep;
          if (cfg.prev_dropout > 0.0) {
            keep = Matrix::Ones(s.coef.rows(), s.coef.cols());
            // row 0 is the speaker start token and is never dropped
            for (Eigen::Index r = 1; r < keep.rows(); ++r)
              if (train_noise.uniform() < cfg.prev_dropout) keep.row(r).setZero();
          }
          GmegLossTerms t = model.loss(tape, s.coef, s.audio, s.label, s.speaker, noise_w, noise_z,
                                       cfg.weighting, keep.size() > 0 ? &keep : nullptr);
          batch_loss = i == at ? t.total : add(batch_loss, t.total);
        }
        tape.backward(scale(batch_loss, 1.0 / static_cast<double>(end - at)));
        opt.step();
      }
      log.push_back({epoch, evaluate()});
    } catch (const std::domain_error& e) {
      throw std::runtime_error("gmeg training diverged (non-finite loss) at epoch " + std::to_string(epoch) +
                               ": " + e.what());
    }
    if (on_epoch) on_epoch(epoch, log.back());
  }
  return log;
}

}  // namespace gmixseq
