// Copyright 2026 The pitl Authors
// SPDX-License-Identifier: Apache-2.0

#include "pitl/model.hpp"

#include <array>
#include <stdexcept>

#include "pitl/log.hpp"

namespace pitl {

// ---------------------------------------------------------------------------
// ModelConfig

ModelConfig ModelConfig::reference_scale() {
  ModelConfig c;
  c.vision_layers = 12;
  c.text_layers = 6;
  c.fusion_layers = 6;
  c.hidden_dim = 768;
  c.heads = 12;
  c.patch_size = 16;
  c.image_size = 224;
  c.vocab_size = 30522;
  c.max_text_len = 30;
  c.projection_dim = 256;
  c.mlp_ratio = 4;
  return c;
}

void ModelConfig::validate() const {
  const std::array<std::pair<const char*, int>, 12> counts{{{"vision_layers", vision_layers},
                                                            {"text_layers", text_layers},
                                                            {"fusion_layers", fusion_layers},
                                                            {"hidden_dim", hidden_dim},
                                                            {"heads", heads},
                                                            {"patch_size", patch_size},
                                                            {"image_size", image_size},
                                                            {"channels", channels},
                                                            {"vocab_size", vocab_size},
                                                            {"max_text_len", max_text_len},
                                                            {"projection_dim", projection_dim},
                                                            {"mlp_ratio", mlp_ratio}}};
  for (const auto& [name, v] : counts) {
    if (v < 1) throw ContractError(std::string("model config: ") + name + " must be >= 1");
  }
  if (hidden_dim % heads != 0) throw ContractError("model config: hidden_dim must be divisible by heads");
  if (image_size % patch_size != 0) throw ContractError("model config: image_size must be divisible by patch_size");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"vision_layers", vision_layers}, {"text_layers", text_layers}, {"fusion_layers", fusion_layers},
          {"hidden_dim", hidden_dim},       {"heads", heads},             {"patch_size", patch_size},
          {"image_size", image_size},       {"channels", channels},       {"vocab_size", vocab_size},
          {"max_text_len", max_text_len},   {"projection_dim", projection_dim}, {"mlp_ratio", mlp_ratio}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!c.set(it.key(), std::to_string(it.value().get<long>()))) {
      throw ContractError("unknown model config key: " + it.key());
    }
  }
  c.validate();
  return c;
}

bool ModelConfig::set(const std::string& key, const std::string& value) {
  int* field = nullptr;
  if (key == "vision_layers") field = &vision_layers;
  else if (key == "text_layers") field = &text_layers;
  else if (key == "fusion_layers") field = &fusion_layers;
  else if (key == "hidden_dim") field = &hidden_dim;
  else if (key == "heads") field = &heads;
  else if (key == "patch_size") field = &patch_size;
  else if (key == "image_size") field = &image_size;
  else if (key == "channels") field = &channels;
  else if (key == "vocab_size") field = &vocab_size;
  else if (key == "max_text_len") field = &max_text_len;
  else if (key == "projection_dim") field = &projection_dim;
  else if (key == "mlp_ratio") field = &mlp_ratio;
  if (!field) return false;
  try {
    std::size_t used = 0;
    *field = std::stoi(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
  } catch (const std::exception&) {
    throw ContractError("model config: '" + key + "' expects an integer, got '" + value + "'");
  }
  return true;
}

// ---------------------------------------------------------------------------
// Model

template <typename Scalar>
Model<Scalar>::Model(ModelConfig config, std::uint64_t init_seed) : config_(config) {
  config_.validate();
  auto rng = make_rng(init_seed, "init");
  create_parameters(rng);
  bind();
}

template <typename Scalar>
Model<Scalar>::Model(ModelConfig config, ParameterStore<Scalar> params) : config_(config) {
  config_.validate();
  Rng rng(0);
  create_parameters(rng);
  if (params.size() != params_.size()) throw CheckpointError("parameter count does not match the model config");
  for (auto& p : params_) {
    if (!params.contains(p.name)) throw CheckpointError("missing parameter " + p.name);
    const auto& src = params.at(p.name);
    if (src.value.rows() != p.value.rows() || src.value.cols() != p.value.cols()) {
      throw CheckpointError("shape mismatch for parameter " + p.name);
    }
  }
  params_ = std::move(params);
  bind();
}

template <typename Scalar>
void Model<Scalar>::create_parameters(Rng& rng) {
  const Index d = config_.hidden_dim;
  const Index ff = d * config_.mlp_ratio;
  auto normal = [&](Index r, Index c) { return truncated_normal<Scalar>(r, c, 0.02, rng); };
  auto linear = [&](const std::string& prefix, Index in, Index out) {
    params_.add(prefix + ".weight", normal(in, out));
    params_.add(prefix + ".bias", Matrix<Scalar>::Zero(1, out));
  };
  auto norm = [&](const std::string& prefix) {
    params_.add(prefix + ".gamma", Matrix<Scalar>::Ones(1, d));
    params_.add(prefix + ".beta", Matrix<Scalar>::Zero(1, d));
  };
  auto block = [&](const std::string& prefix, bool cross) {
    norm(prefix + ".ln_self");
    for (const char* m : {"q", "k", "v", "o"}) linear(prefix + ".self_attn." + m, d, d);
    if (cross) {
      norm(prefix + ".ln_cross");
      for (const char* m : {"q", "k", "v", "o"}) linear(prefix + ".cross_attn." + m, d, d);
    }
    norm(prefix + ".ln_mlp");
    linear(prefix + ".fc1", d, ff);
    linear(prefix + ".fc2", ff, d);
  };

  linear("vision.patch_embed", config_.patch_dim(), d);
  params_.add("vision.cls", normal(1, d));
  params_.add("vision.pos_embed", normal(config_.num_patches() + 1, d));
  for (int i = 0; i < config_.vision_layers; ++i) block("vision.blocks." + std::to_string(i), false);
  norm("vision.final_norm");

  params_.add("text.token_embed", normal(config_.vocab_size, d));
  params_.add("text.pos_embed", normal(config_.max_text_len + 1, d));
  for (int i = 0; i < config_.text_layers; ++i) block("text.blocks." + std::to_string(i), false);
  norm("text.final_norm");

  for (int i = 0; i < config_.fusion_layers; ++i) block("fusion.blocks." + std::to_string(i), true);
  norm("fusion.final_norm");

  linear("head.proj_image", d, config_.projection_dim);
  linear("head.proj_text", d, config_.projection_dim);
  linear("head.itm", d, 2);
  linear("head.mlm", d, config_.vocab_size);
  params_.add("temperature.log_tau", Matrix<Scalar>::Constant(1, 1, static_cast<Scalar>(std::log(kInitialTemperature))));
}

template <typename Scalar>
typename Model<Scalar>::Linear Model<Scalar>::bind_linear(const std::string& prefix) {
  return {&params_.at(prefix + ".weight"), &params_.at(prefix + ".bias")};
}

template <typename Scalar>
typename Model<Scalar>::Norm Model<Scalar>::bind_norm(const std::string& prefix) {
  return {&params_.at(prefix + ".gamma"), &params_.at(prefix + ".beta")};
}

template <typename Scalar>
typename Model<Scalar>::Attention Model<Scalar>::bind_attention(const std::string& prefix) {
  return {bind_linear(prefix + ".q"), bind_linear(prefix + ".k"), bind_linear(prefix + ".v"),
          bind_linear(prefix + ".o")};
}

template <typename Scalar>
typename Model<Scalar>::Block Model<Scalar>::bind_block(const std::string& prefix, bool cross) {
  Block b;
  b.ln_self = bind_norm(prefix + ".ln_self");
  b.self_attn = bind_attention(prefix + ".self_attn");
  b.has_cross = cross;
  if (cross) {
    b.ln_cross = bind_norm(prefix + ".ln_cross");
    b.cross_attn = bind_attention(prefix + ".cross_attn");
  }
  b.ln_mlp = bind_norm(prefix + ".ln_mlp");
  b.fc1 = bind_linear(prefix + ".fc1");
  b.fc2 = bind_linear(prefix + ".fc2");
  return b;
}

template <typename Scalar>
void Model<Scalar>::bind() {
  patch_embed_ = bind_linear("vision.patch_embed");
  vision_cls_ = &params_.at("vision.cls");
  vision_pos_ = &params_.at("vision.pos_embed");
  vision_blocks_.clear();
  for (int i = 0; i < config_.vision_layers; ++i) vision_blocks_.push_back(bind_block("vision.blocks." + std::to_string(i), false));
  vision_final_ = bind_norm("vision.final_norm");

  token_embed_ = &params_.at("text.token_embed");
  text_pos_ = &params_.at("text.pos_embed");
  text_blocks_.clear();
  for (int i = 0; i < config_.text_layers; ++i) text_blocks_.push_back(bind_block("text.blocks." + std::to_string(i), false));
  text_final_ = bind_norm("text.final_norm");

  fusion_blocks_.clear();
  for (int i = 0; i < config_.fusion_layers; ++i) fusion_blocks_.push_back(bind_block("fusion.blocks." + std::to_string(i), true));
  fusion_final_ = bind_norm("fusion.final_norm");

  proj_image_ = bind_linear("head.proj_image");
  proj_text_ = bind_linear("head.proj_text");
  itm_head_ = bind_linear("head.itm");
  mlm_head_ = bind_linear("head.mlm");
  log_tau_ = &params_.at("temperature.log_tau");
}

template <typename Scalar>
Var<Scalar> Model<Scalar>::linear(Tape<Scalar>& tape, const Linear& l, const Var<Scalar>& x) {
  return add_row(matmul(x, tape.param(*l.weight)), tape.param(*l.bias));
}

template <typename Scalar>
Var<Scalar> Model<Scalar>::norm(Tape<Scalar>& tape, const Norm& n, const Var<Scalar>& x) {
  return layer_norm(x, tape.param(*n.gamma), tape.param(*n.beta));
}

template <typename Scalar>
Var<Scalar> Model<Scalar>::attention(Tape<Scalar>& tape, const Attention& a, const Var<Scalar>& query,
                                     const Var<Scalar>& context, const std::vector<char>& key_valid) {
  const auto q = linear(tape, a.q, query);
  const auto k = linear(tape, a.k, context);
  const auto v = linear(tape, a.v, context);
  const Index dh = config_.hidden_dim / config_.heads;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  std::vector<Var<Scalar>> heads;
  heads.reserve(static_cast<std::size_t>(config_.heads));
  for (Index h = 0; h < config_.heads; ++h) {
    auto scores = scale * matmul_nt(slice_cols(q, h * dh, dh), slice_cols(k, h * dh, dh));
    auto weights = masked_softmax_rows(scores, key_valid);
    heads.push_back(matmul(weights, slice_cols(v, h * dh, dh)));
  }
  auto merged = heads.size() == 1 ? heads[0] : concat_cols<Scalar>(heads);
  return linear(tape, a.o, merged);
}

template <typename Scalar>
Var<Scalar> Model<Scalar>::block(Tape<Scalar>& tape, const Block& b, const Var<Scalar>& x,
                                 const std::vector<char>& key_valid, const Var<Scalar>* image_context) {
  auto h = norm(tape, b.ln_self, x);
  auto out = x + attention(tape, b.self_attn, h, h, key_valid);
  if (b.has_cross) {
    h = norm(tape, b.ln_cross, out);
    out = out + attention(tape, b.cross_attn, h, *image_context, {});
  }
  h = norm(tape, b.ln_mlp, out);
  return out + linear(tape, b.fc2, gelu(linear(tape, b.fc1, h)));
}

template <typename Scalar>
EncodedImage<Scalar> Model<Scalar>::encode_image(Tape<Scalar>& tape, const ImageTensor<Scalar>& image) {
  if (image.height != config_.image_size || image.width != config_.image_size || image.channels != config_.channels ||
      image.pixels.rows() != image.height * image.width || image.pixels.cols() != image.channels) {
    throw ContractError("encode_image: expected " + std::to_string(config_.image_size) + "x" +
                        std::to_string(config_.image_size) + "x" + std::to_string(config_.channels) + " pixels, got " +
                        std::to_string(image.height) + "x" + std::to_string(image.width) + "x" +
                        std::to_string(image.channels));
  }
  return encode_image(tape, tape.constant(image.pixels));
}

template <typename Scalar>
EncodedImage<Scalar> Model<Scalar>::encode_image(Tape<Scalar>& tape, const Var<Scalar>& pixels) {
  if (pixels.rows() != static_cast<Index>(config_.image_size) * config_.image_size || pixels.cols() != config_.channels) {
    throw ContractError("encode_image: pixel matrix has the wrong shape");
  }
  auto patches = patchify(pixels, config_.image_size, config_.patch_size);
  return encode_patches(tape, patches, tape.param(*vision_pos_));
}

template <typename Scalar>
EncodedImage<Scalar> Model<Scalar>::encode_patches(Tape<Scalar>& tape, const Var<Scalar>& patches,
                                                   const Var<Scalar>& positional) {
  if (patches.cols() != config_.patch_dim() || positional.rows() != patches.rows() + 1 ||
      positional.cols() != config_.hidden_dim) {
    throw ContractError("encode_patches: shape mismatch");
  }
  auto embedded = linear(tape, patch_embed_, patches);
  std::vector<Var<Scalar>> parts{tape.param(*vision_cls_), embedded};
  auto x = concat_rows<Scalar>(parts) + positional;
  for (const auto& b : vision_blocks_) x = block(tape, b, x, {}, nullptr);
  x = norm(tape, vision_final_, x);
  return {x, slice_rows(x, 0, 1), patches.rows()};
}

template <typename Scalar>
EncodedText<Scalar> Model<Scalar>::encode_text(Tape<Scalar>& tape, const std::vector<int>& token_ids,
                                               const std::vector<char>& key_valid) {
  const auto n = static_cast<Index>(token_ids.size());
  if (n < 1) throw ContractError("encode_text: empty token sequence");
  if (n > config_.max_text_len + 1) {
    throw ContractError("encode_text: " + std::to_string(n - 1) + " tokens exceed max_text_len " +
                        std::to_string(config_.max_text_len));
  }
  for (int id : token_ids) {
    if (id < 0 || id >= config_.vocab_size) throw ContractError("encode_text: token id " + std::to_string(id) + " out of vocabulary");
  }
  if (!key_valid.empty() && (static_cast<Index>(key_valid.size()) != n || !key_valid[0])) {
    throw ContractError("encode_text: mask must cover every position and keep the CLS position");
  }
  auto x = gather_rows(tape.param(*token_embed_), token_ids) + slice_rows(tape.param(*text_pos_), 0, n);
  for (const auto& b : text_blocks_) x = block(tape, b, x, key_valid, nullptr);
  x = norm(tape, text_final_, x);
  return {x, slice_rows(x, 0, 1), key_valid};
}

template <typename Scalar>
FusedSequence<Scalar> Model<Scalar>::fuse(Tape<Scalar>& tape, const EncodedImage<Scalar>& image,
                                          const EncodedText<Scalar>& text) {
  if (image.sequence.cols() != text.sequence.cols() || text.sequence.cols() != config_.hidden_dim) {
    throw ContractError("fuse: hidden dimension mismatch");
  }
  auto x = text.sequence;
  for (const auto& b : fusion_blocks_) x = block(tape, b, x, text.key_valid, &image.sequence);
  x = norm(tape, fusion_final_, x);
  return {x, slice_rows(x, 0, 1)};
}

template <typename Scalar>
Var<Scalar> Model<Scalar>::project(Tape<Scalar>& tape, const Var<Scalar>& cls_rows, ProjectionHead head) {
  if (cls_rows.cols() != config_.hidden_dim) throw ContractError("project_cls: input must have hidden_dim columns");
  return linear(tape, head == ProjectionHead::Image ? proj_image_ : proj_text_, cls_rows);
}

template <typename Scalar>
Var<Scalar> Model<Scalar>::project_cls(Tape<Scalar>& tape, const Var<Scalar>& cls_rows, ProjectionHead head) {
  auto raw = project(tape, cls_rows, head);
  const Scalar eps = Scalar(1e-12);
  if ((raw.value().rowwise().norm().array() <= eps).any()) {
    log::warn("project_cls: projected vector has (near) zero norm; normalization floored");
  }
  return l2_normalize_rows(raw, eps);
}

template <typename Scalar>
Var<Scalar> Model<Scalar>::itm_logits(Tape<Scalar>& tape, const Var<Scalar>& fused_cls_rows) {
  return linear(tape, itm_head_, fused_cls_rows);
}

template <typename Scalar>
Var<Scalar> Model<Scalar>::mlm_logits(Tape<Scalar>& tape, const Var<Scalar>& token_rows) {
  return linear(tape, mlm_head_, token_rows);
}

template <typename Scalar>
Var<Scalar> Model<Scalar>::log_temperature(Tape<Scalar>& tape) {
  return tape.param(*log_tau_);
}

template <typename Scalar>
Scalar Model<Scalar>::temperature() const {
  return std::exp(log_tau_->value(0, 0));
}

template <typename Scalar>
void Model<Scalar>::clamp_temperature() {
  const auto lo = static_cast<Scalar>(std::log(kMinTemperature));
  const auto hi = static_cast<Scalar>(std::log(kMaxTemperature));
  log_tau_->value(0, 0) = std::clamp(log_tau_->value(0, 0), lo, hi);
}

template <typename Scalar>
void import_pretrained_weights(Model<Scalar>&, const std::string& source) {
  throw std::logic_error("importing pretrained weights is not supported (source: " + source + ")");
}

template class Model<float>;
template class Model<double>;
template void import_pretrained_weights(Model<float>&, const std::string&);
template void import_pretrained_weights(Model<double>&, const std::string&);

}  // namespace pitl
