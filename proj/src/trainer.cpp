// Copyright 2026 The pitl Authors
// SPDX-License-Identifier: Apache-2.0

#include "pitl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "pitl/errors.hpp"
#include "pitl/log.hpp"

namespace pitl {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// TrainConfig

double TrainConfig::learning_rate_at(long step) const {
  const long warmup = resolved_warmup();
  if (step < warmup) return learning_rate * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const double span = static_cast<double>(std::max<long>(1, steps - warmup));
  const double progress = std::min(1.0, static_cast<double>(step - warmup) / span);
  return learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void TrainConfig::validate() const {
  if (steps < 1) throw ContractError("steps must be >= 1");
  if (resolved_warmup() > steps) throw ContractError("warmup_steps must not exceed steps");
  if (!(mask_rate > 0.0 && mask_rate < 1.0)) throw ContractError("mask_rate must be in (0, 1)");
  if (batch_size < 2) throw ContractError("batch_size must be >= 2");
  if (queue_size < 1) throw ContractError("queue_size must be >= 1");
  if (learning_rate < 0.0 || weight_decay < 0.0) throw ContractError("learning_rate and weight_decay must be >= 0");
  if (ema_momentum < 0.0 || ema_momentum >= 1.0) throw ContractError("ema_momentum must be in [0, 1)");
  if (checkpoint_interval < 0) throw ContractError("checkpoint_interval must be >= 0");
}

LossOptions TrainConfig::loss_options() const {
  LossOptions o;
  o.target = target;
  o.similarity = similarity;
  o.negatives = negatives;
  o.mask_rate = mask_rate;
  return o;
}

namespace {

std::string prompt_filter_string(const std::optional<std::set<promptgen::PromptId>>& filter) {
  if (!filter) return "all";
  std::string out;
  for (auto id : *filter) {
    if (!out.empty()) out += ",";
    out += promptgen::to_string(id);
  }
  return out;
}

std::optional<std::set<promptgen::PromptId>> parse_prompt_filter(std::string_view text) {
  if (text.empty() || text == "all" || text == "All") return std::nullopt;
  auto ids = promptgen::parse_prompt_list(text);
  return std::set<promptgen::PromptId>(ids.begin(), ids.end());
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ContractError("not a boolean: " + v);
}

}  // namespace

json TrainConfig::to_json() const {
  return json{{"steps", steps},
              {"batch_size", batch_size},
              {"learning_rate", learning_rate},
              {"weight_decay", weight_decay},
              {"warmup_steps", resolved_warmup()},
              {"seed", seed},
              {"queue_size", queue_size},
              {"mask_rate", mask_rate},
              {"checkpoint_interval", checkpoint_interval},
              {"prompt_filter", prompt_filter_string(prompt_filter)},
              {"shuffled", shuffled},
              {"target", to_string(target)},
              {"similarity", to_string(similarity)},
              {"negatives", to_string(negatives)},
              {"ema_momentum", ema_momentum},
              {"adam_beta1", adam_beta1},
              {"adam_beta2", adam_beta2},
              {"adam_epsilon", adam_epsilon}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  c.steps = j.at("steps").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.warmup_steps = j.at("warmup_steps").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.queue_size = j.at("queue_size").get<int>();
  c.mask_rate = j.at("mask_rate").get<double>();
  c.checkpoint_interval = j.at("checkpoint_interval").get<int>();
  c.prompt_filter = parse_prompt_filter(j.at("prompt_filter").get<std::string>());
  c.shuffled = j.at("shuffled").get<bool>();
  c.target = parse_target_mode(j.at("target").get<std::string>());
  c.similarity = parse_similarity_mode(j.at("similarity").get<std::string>());
  c.negatives = parse_negative_strategy(j.at("negatives").get<std::string>());
  c.ema_momentum = j.at("ema_momentum").get<double>();
  c.adam_beta1 = j.at("adam_beta1").get<double>();
  c.adam_beta2 = j.at("adam_beta2").get<double>();
  c.adam_epsilon = j.at("adam_epsilon").get<double>();
  return c;
}

bool TrainConfig::set(const std::string& key, const std::string& value) {
  if (key == "steps") steps = std::stoi(value);
  else if (key == "batch_size") batch_size = std::stoi(value);
  else if (key == "learning_rate") learning_rate = std::stod(value);
  else if (key == "weight_decay") weight_decay = std::stod(value);
  else if (key == "warmup_steps") warmup_steps = std::stoi(value);
  else if (key == "seed") seed = std::stoull(value);
  else if (key == "queue_size") queue_size = std::stoi(value);
  else if (key == "mask_rate") mask_rate = std::stod(value);
  else if (key == "checkpoint_interval") checkpoint_interval = std::stoi(value);
  else if (key == "prompt_filter") prompt_filter = parse_prompt_filter(value);
  else if (key == "shuffled") shuffled = parse_bool(value);
  else if (key == "target") target = parse_target_mode(value);
  else if (key == "similarity") similarity = parse_similarity_mode(value);
  else if (key == "negatives") negatives = parse_negative_strategy(value);
  else if (key == "ema_momentum") ema_momentum = std::stod(value);
  else if (key == "adam_beta1") adam_beta1 = std::stod(value);
  else if (key == "adam_beta2") adam_beta2 = std::stod(value);
  else if (key == "adam_epsilon") adam_epsilon = std::stod(value);
  else return false;
  return true;
}

// ---------------------------------------------------------------------------
// AdamW

template <typename Scalar>
bool AdamW<Scalar>::decays(const std::string& name) {
  constexpr std::string_view suffix = ".weight";
  return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
}

template <typename Scalar>
void AdamW<Scalar>::step(ParameterStore<Scalar>& params, double lr) {
  ++t_;
  const Scalar b1 = static_cast<Scalar>(beta1_);
  const Scalar b2 = static_cast<Scalar>(beta2_);
  const Scalar c1 = static_cast<Scalar>(1.0 - std::pow(beta1_, static_cast<double>(t_)));
  const Scalar c2 = static_cast<Scalar>(1.0 - std::pow(beta2_, static_cast<double>(t_)));
  const Scalar rate = static_cast<Scalar>(lr);
  const Scalar decay = static_cast<Scalar>(lr * weight_decay_);
  const Scalar eps = static_cast<Scalar>(epsilon_);
  for (auto& p : params) {
    auto& mo = moments_[p.name];
    if (mo.m.size() == 0) {
      mo.m = Matrix<Scalar>::Zero(p.value.rows(), p.value.cols());
      mo.v = Matrix<Scalar>::Zero(p.value.rows(), p.value.cols());
    }
    mo.m = b1 * mo.m + (Scalar(1) - b1) * p.grad;
    mo.v = b2 * mo.v + (Scalar(1) - b2) * p.grad.cwiseProduct(p.grad);
    if (decays(p.name)) p.value -= decay * p.value;
    p.value.array() -= rate * (mo.m.array() / c1) / ((mo.v.array() / c2).sqrt() + eps);
  }
}

template class AdamW<float>;
template class AdamW<double>;

// ---------------------------------------------------------------------------
// Metrics

json StepMetrics::to_json() const {
  return json{{"step", step},
              {"itc", itc},
              {"itm", itm},
              {"mlm", mlm},
              {"imc", imc},
              {"total", total},
              {"tau", tau},
              {"lr", learning_rate},
              {"image_queue", image_queue},
              {"text_queue", text_queue},
              {"itm_pairs", itm_pairs},
              {"itm_skipped", itm_skipped},
              {"masked_tokens", masked_tokens}};
}

// ---------------------------------------------------------------------------
// Training data

TrainingData prepare_training_data(const corpus::Manifest& manifest, const TrainConfig& config,
                                   const ModelConfig& model_config) {
  std::vector<std::string> texts;
  texts.reserve(manifest.descriptions.size());
  for (const auto& d : manifest.descriptions) texts.push_back(d.text);
  return prepare_training_data(manifest, config, Tokenizer::build(texts, 1, model_config.vocab_size));
}

TrainingData prepare_training_data(const corpus::Manifest& manifest, const TrainConfig& config, Tokenizer tokenizer) {
  auto index = corpus::build_split_index(manifest, corpus::Split::Pretrain);
  TrainingData data{std::move(index), std::move(tokenizer), {}, std::nullopt, 0.0};
  if (config.shuffled) {
    const auto seed = substream_seed(config.seed, "shuffle");
    auto shuffled = corpus::shuffle_pairs(data.index, seed);
    data.index = std::move(shuffled.index);
    data.shuffle_seed = shuffled.seed;
    data.cross_category_fraction = shuffled.cross_category_fraction;
  }
  for (const auto& [cat, bucket] : data.index.buckets()) data.categories.push_back(cat);
  return data;
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(ModelConfig model_config, TrainConfig config, TrainingData data)
    : model_config_(model_config),
      config_(std::move(config)),
      data_(std::move(data)),
      model_(model_config, substream_seed(config_.seed, "init")),
      optimizer_(config_.adam_beta1, config_.adam_beta2, config_.adam_epsilon, config_.weight_decay),
      image_queue_(config_.queue_size,
                   config_.similarity == SimilarityMode::Projected ? model_config.projection_dim : model_config.hidden_dim,
                   config_.similarity == SimilarityMode::Projected),
      text_queue_(config_.queue_size,
                  config_.similarity == SimilarityMode::Projected ? model_config.projection_dim : model_config.hidden_dim,
                  config_.similarity == SimilarityMode::Projected),
      sampler_rng_(make_rng(config_.seed, "sampler")),
      mask_rng_(make_rng(config_.seed, "mask")),
      negative_rng_(make_rng(config_.seed, "negatives")) {
  config_.validate();
  if (data_.tokenizer.size() > model_config.vocab_size) {
    throw ContractError("tokenizer has " + std::to_string(data_.tokenizer.size()) + " entries, model vocabulary " +
                        std::to_string(model_config.vocab_size));
  }
  for (std::size_t i = 0; i < data_.categories.size(); ++i) category_code_[data_.categories[i]] = static_cast<int>(i);
  if (config_.ema_momentum > 0.0) ema_.emplace(model_config_, model_.parameters());
}

const ImageTensor<float>& Trainer::image(const std::string& image_id) {
  auto it = image_cache_.find(image_id);
  if (it != image_cache_.end()) return it->second;
  const auto& record = data_.index.images()[data_.index.image_position(image_id)];
  auto img = corpus::load_image(record, model_config_.image_size, model_config_.channels);
  return image_cache_.emplace(image_id, ImageTensor<float>::from(img)).first->second;
}

const std::vector<int>& Trainer::tokens(const std::string& description_id) {
  auto it = token_cache_.find(description_id);
  if (it != token_cache_.end()) return it->second;
  const auto& record = data_.index.descriptions()[data_.index.description_position(description_id)];
  return token_cache_.emplace(description_id, data_.tokenizer.encode(record.text, model_config_.max_text_len))
      .first->second;
}

StepInputs<float> Trainer::inputs_for(const corpus::PairBatch& batch) {
  StepInputs<float> in;
  for (const auto& t : batch.triples) {
    in.images.push_back(image(t.image_id));
    in.token_ids.push_back(tokens(t.description_id));
    auto code = category_code_.find(t.category_id);
    if (code == category_code_.end()) throw ContractError("batch category not in training data: " + t.category_id);
    in.categories.push_back(code->second);
  }
  return in;
}

void Trainer::enqueue(const LossTerms<float>& terms, const StepInputs<float>& inputs) {
  if (!ema_) {
    image_queue_.enqueue(terms.image_embeddings.value(), inputs.categories);
    text_queue_.enqueue(terms.text_embeddings.value(), inputs.categories);
    return;
  }
  Tape<float> tape;
  std::vector<Var<float>> image_cls;
  std::vector<Var<float>> text_cls;
  for (std::size_t i = 0; i < inputs.images.size(); ++i) {
    image_cls.push_back(ema_->encode_image(tape, inputs.images[i]).cls);
    text_cls.push_back(ema_->encode_text(tape, inputs.token_ids[i]).cls);
  }
  auto image_rows = concat_rows<float>(image_cls);
  auto text_rows = concat_rows<float>(text_cls);
  if (config_.similarity == SimilarityMode::Projected) {
    image_rows = ema_->project_cls(tape, image_rows, ProjectionHead::Image);
    text_rows = ema_->project_cls(tape, text_rows, ProjectionHead::Text);
  }
  image_queue_.enqueue(image_rows.value(), inputs.categories);
  text_queue_.enqueue(text_rows.value(), inputs.categories);
}

StepMetrics Trainer::train_step() {
  corpus::SampleOptions options;
  options.prompt_filter = config_.prompt_filter;
  const std::uint64_t batch_seed = sampler_rng_();
  return train_step(corpus::sample_batch(data_.index, config_.batch_size, batch_seed, options));
}

StepMetrics Trainer::train_step(const corpus::PairBatch& batch) {
  auto inputs = inputs_for(batch);
  Tape<float> tape;
  StepPlan plan;
  auto terms = pretraining_losses(model_, tape, inputs, image_queue_, text_queue_, config_.loss_options(), plan,
                                  &negative_rng_, &mask_rng_);

  StepMetrics m;
  m.itc = terms.itc.item();
  m.itm = terms.itm.item();
  m.mlm = terms.mlm.item();
  m.imc = terms.imc.item();
  m.total = terms.total.item();
  if (!std::isfinite(m.total)) {
    std::ostringstream msg;
    msg << "non-finite loss at step " << step_ + 1 << " (itc=" << m.itc << " itm=" << m.itm << " mlm=" << m.mlm
        << " imc=" << m.imc << ")";
    if (!last_checkpoint_.empty()) msg << "; last good checkpoint: " << last_checkpoint_;
    throw NonFiniteLossError(msg.str(), step_ + 1, last_checkpoint_);
  }

  model_.parameters().zero_grad();
  tape.backward(terms.total);
  m.learning_rate = config_.learning_rate_at(step_);
  optimizer_.step(model_.parameters(), m.learning_rate);
  model_.clamp_temperature();
  if (ema_) {
    const auto mu = static_cast<float>(config_.ema_momentum);
    auto& target = ema_->parameters();
    for (const auto& p : model_.parameters()) {
      auto& e = target.at(p.name);
      e.value = mu * e.value + (1.0f - mu) * p.value;
    }
  }
  enqueue(terms, inputs);
  ++step_;

  m.step = step_;
  m.tau = static_cast<double>(model_.temperature());
  m.image_queue = image_queue_.size();
  m.text_queue = text_queue_.size();
  m.itm_pairs = static_cast<long>(plan.itm->pairs.size());
  m.itm_skipped = plan.itm->skipped;
  m.masked_tokens = terms.masked_tokens;
  return m;
}

// ---------------------------------------------------------------------------
// Binary arrays

namespace {

constexpr char kArrayMagic[8] = {'P', 'I', 'T', 'L', 'A', 'R', 'R', '1'};

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const fs::path& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw CheckpointError("truncated array file " + path.string());
  return v;
}

}  // namespace

template <typename Scalar>
void write_arrays(const fs::path& path, const std::vector<std::pair<std::string, Matrix<Scalar>>>& arrays) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write " + path.string());
  out.write(kArrayMagic, sizeof(kArrayMagic));
  put<std::uint64_t>(out, arrays.size());
  for (const auto& [name, m] : arrays) {
    put<std::uint64_t>(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::int64_t>(out, m.rows());
    put<std::int64_t>(out, m.cols());
    put<std::uint32_t>(out, sizeof(Scalar));
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(sizeof(Scalar) * m.size()));
  }
  if (!out) throw CheckpointError("failed writing " + path.string());
}

template <typename Scalar>
std::vector<std::pair<std::string, Matrix<Scalar>>> read_arrays(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  char magic[sizeof(kArrayMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kArrayMagic, sizeof(magic)) != 0) throw CheckpointError("bad magic in " + path.string());
  const auto count = get<std::uint64_t>(in, path);
  std::vector<std::pair<std::string, Matrix<Scalar>>> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = get<std::uint64_t>(in, path);
    if (len > 4096) throw CheckpointError("corrupt name length in " + path.string());
    std::string name(len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(len));
    const auto rows = get<std::int64_t>(in, path);
    const auto cols = get<std::int64_t>(in, path);
    const auto width = get<std::uint32_t>(in, path);
    if (width != sizeof(Scalar)) throw CheckpointError("scalar width mismatch in " + path.string());
    if (rows < 0 || cols < 0) throw CheckpointError("corrupt shape in " + path.string());
    Matrix<Scalar> m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(Scalar) * m.size()));
    if (!in) throw CheckpointError("truncated array file " + path.string());
    out.emplace_back(std::move(name), std::move(m));
  }
  return out;
}

template void write_arrays<float>(const fs::path&, const std::vector<std::pair<std::string, Matrix<float>>>&);
template void write_arrays<double>(const fs::path&, const std::vector<std::pair<std::string, Matrix<double>>>&);
template std::vector<std::pair<std::string, Matrix<float>>> read_arrays<float>(const fs::path&);
template std::vector<std::pair<std::string, Matrix<double>>> read_arrays<double>(const fs::path&);

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw CheckpointError("malformed " + path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw CheckpointError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::vector<std::pair<std::string, Matrix<float>>> parameter_arrays(const ParameterStore<float>& store,
                                                                    const std::string& prefix = "") {
  std::vector<std::pair<std::string, Matrix<float>>> out;
  for (const auto& p : store) out.emplace_back(prefix + p.name, p.value);
  return out;
}

ParameterStore<float> store_from_arrays(const std::vector<std::pair<std::string, Matrix<float>>>& arrays) {
  ParameterStore<float> store;
  for (const auto& [name, m] : arrays) store.add(name, m);
  return store;
}

}  // namespace

void Trainer::save_checkpoint(const fs::path& dir) const {
  fs::create_directories(dir);
  write_json(dir / "config.json", json{{"format", 1},
                                       {"model", model_config_.to_json()},
                                       {"train", config_.to_json()},
                                       {"step", step_},
                                       {"categories", data_.categories}});
  data_.tokenizer.save(dir / "vocab.txt");
  write_arrays<float>(dir / "parameters.bin", parameter_arrays(model_.parameters()));

  std::vector<std::pair<std::string, Matrix<float>>> state;
  for (const auto& [name, mo] : optimizer_.moments()) {
    state.emplace_back("adam.m/" + name, mo.m);
    state.emplace_back("adam.v/" + name, mo.v);
  }
  state.emplace_back("queue.image", image_queue_.embeddings());
  state.emplace_back("queue.text", text_queue_.embeddings());
  if (ema_) {
    for (auto& entry : parameter_arrays(ema_->parameters(), "ema/")) state.push_back(std::move(entry));
  }
  write_arrays<float>(dir / "state.bin", state);

  write_json(dir / "state.json", json{{"step", step_},
                                      {"adam_steps", optimizer_.steps_taken()},
                                      {"queue_image_categories", image_queue_.categories()},
                                      {"queue_text_categories", text_queue_.categories()},
                                      {"rng_sampler", serialize_rng(sampler_rng_)},
                                      {"rng_mask", serialize_rng(mask_rng_)},
                                      {"rng_negatives", serialize_rng(negative_rng_)}});
}

void Trainer::load_state(const fs::path& dir) {
  const json cfg = read_json(dir / "config.json");
  if (ModelConfig::from_json(cfg.at("model")) != model_config_) {
    throw CheckpointError("checkpoint model config differs from the trainer's");
  }
  if (cfg.at("categories").get<std::vector<std::string>>() != data_.categories) {
    throw CheckpointError("checkpoint categories differ from the training data");
  }
  model_ = Model<float>(model_config_, store_from_arrays(read_arrays<float>(dir / "parameters.bin")));

  const json st = read_json(dir / "state.json");
  auto arrays = read_arrays<float>(dir / "state.bin");
  std::map<std::string, Matrix<float>> by_name(std::make_move_iterator(arrays.begin()),
                                                std::make_move_iterator(arrays.end()));
  optimizer_.moments().clear();
  ParameterStore<float> ema_store;
  for (auto& [name, m] : by_name) {
    if (name.starts_with("adam.m/")) optimizer_.moments()[name.substr(7)].m = m;
    if (name.starts_with("adam.v/")) optimizer_.moments()[name.substr(7)].v = m;
    if (name.starts_with("ema/")) ema_store.add(name.substr(4), m);
  }
  optimizer_.set_steps_taken(st.at("adam_steps").get<long>());
  if (ema_) {
    if (ema_store.size() == 0) throw CheckpointError("checkpoint lacks EMA parameters");
    ema_.emplace(model_config_, std::move(ema_store));
  }

  auto restore_queue = [&](EmbeddingQueue<float>& q, const std::string& key, const std::string& cat_key) {
    auto it = by_name.find(key);
    if (it == by_name.end()) throw CheckpointError("checkpoint lacks " + key);
    const auto cats = st.at(cat_key).get<std::vector<int>>();
    if (static_cast<std::size_t>(it->second.rows()) != cats.size()) throw CheckpointError("queue size mismatch");
    q.clear();
    if (!cats.empty()) q.enqueue(it->second, cats);
  };
  restore_queue(image_queue_, "queue.image", "queue_image_categories");
  restore_queue(text_queue_, "queue.text", "queue_text_categories");

  deserialize_rng(sampler_rng_, st.at("rng_sampler").get<std::string>());
  deserialize_rng(mask_rng_, st.at("rng_mask").get<std::string>());
  deserialize_rng(negative_rng_, st.at("rng_negatives").get<std::string>());
  step_ = st.at("step").get<long>();
  last_checkpoint_ = dir.string();
}

LoadedCheckpoint load_checkpoint(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw CheckpointError("checkpoint directory not found: " + dir.string());
  const json cfg = read_json(dir / "config.json");
  auto model_config = ModelConfig::from_json(cfg.at("model"));
  auto train_config = TrainConfig::from_json(cfg.at("train"));
  auto tokenizer = Tokenizer::load(dir / "vocab.txt");
  Model<float> model(model_config, store_from_arrays(read_arrays<float>(dir / "parameters.bin")));
  return LoadedCheckpoint{model_config, train_config, std::move(tokenizer), cfg.at("step").get<long>(),
                          std::move(model)};
}

// ---------------------------------------------------------------------------
// run_pretraining

PretrainResult run_pretraining(Trainer& trainer, const fs::path& out_dir) {
  fs::create_directories(out_dir / "checkpoints");
  PretrainResult result;
  result.metrics = out_dir / "metrics.jsonl";

  // Keep rows up to the restored step so a resumed run yields one row per step.
  std::vector<std::string> kept;
  if (trainer.step() > 0 && fs::exists(result.metrics)) {
    std::ifstream in(result.metrics);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (json::parse(line).at("step").get<long>() <= trainer.step()) kept.push_back(line);
    }
  }
  std::ofstream metrics(result.metrics, std::ios::trunc);
  if (!metrics) throw CheckpointError("cannot write " + result.metrics.string());
  for (const auto& line : kept) metrics << line << '\n';

  const auto& config = trainer.config();
  while (trainer.step() < config.steps) {
    auto row = trainer.train_step();
    metrics << row.to_json().dump() << '\n';
    metrics.flush();
    result.rows.push_back(row);
    if (config.checkpoint_interval > 0 && row.step % config.checkpoint_interval == 0 && row.step < config.steps) {
      std::ostringstream name;
      name << "step_" << std::setw(6) << std::setfill('0') << row.step;
      const auto dir = out_dir / "checkpoints" / name.str();
      trainer.save_checkpoint(dir);
      trainer.set_last_checkpoint(dir.string());
    }
  }
  result.checkpoint = out_dir / "checkpoints" / "final";
  trainer.save_checkpoint(result.checkpoint);
  trainer.set_last_checkpoint(result.checkpoint.string());
  return result;
}

// ---------------------------------------------------------------------------
// Gradient check

std::string GradientCheckReport::summary() const {
  std::ostringstream out;
  out << label << ": " << (passed() ? "pass" : "FAIL") << " (" << checked.size()
      << " coordinates, max rel err " << max_relative_error << ", tol " << tolerance << ")";
  for (const auto& f : failures) {
    out << "\n  " << f.parameter << "[" << f.row << "," << f.col << "] analytic " << f.analytic << " numeric "
        << f.numeric << " rel " << f.relative_error;
  }
  return out.str();
}

GradientCheckReport gradient_check(ParameterStore<double>& params,
                                   const std::function<Var<double>(Tape<double>&)>& loss,
                                   const GradientCheckOptions& options, Rng& rng, std::string label) {
  GradientCheckReport report;
  report.label = std::move(label);
  report.tolerance = options.tolerance;
  if (options.coordinates <= 0) {
    log::warn("gradient_check(" + report.label + "): no coordinates requested");
    return report;
  }
  std::vector<Parameter<double>*> tensors;
  for (auto& p : params)
    if (p.value.size() > 0) tensors.push_back(&p);
  if (tensors.empty()) throw ContractError("gradient_check: no parameters");

  params.zero_grad();
  {
    Tape<double> tape;
    auto l = loss(tape);
    tape.backward(l);
  }

  const double h = options.step;
  for (int k = 0; k < options.coordinates; ++k) {
    auto* p = tensors[uniform_index(rng, tensors.size())];
    const auto r = static_cast<Index>(uniform_index(rng, static_cast<std::size_t>(p->value.rows())));
    const auto c = static_cast<Index>(uniform_index(rng, static_cast<std::size_t>(p->value.cols())));
    const double original = p->value(r, c);
    auto at = [&](double x) {
      p->value(r, c) = x;
      Tape<double> tape;
      return loss(tape).item();
    };
    const double f2p = at(original + 2 * h);
    const double f1p = at(original + h);
    const double f1m = at(original - h);
    const double f2m = at(original - 2 * h);
    p->value(r, c) = original;

    GradientCoordinate g;
    g.parameter = p->name;
    g.row = r;
    g.col = c;
    g.analytic = p->grad(r, c);
    g.numeric = (-f2p + 8 * f1p - 8 * f1m + f2m) / (12 * h);
    g.relative_error =
        std::abs(g.analytic - g.numeric) / std::max({std::abs(g.analytic), std::abs(g.numeric), options.floor});
    report.max_relative_error = std::max(report.max_relative_error, g.relative_error);
    if (!(g.relative_error <= options.tolerance)) report.failures.push_back(g);
    report.checked.push_back(g);
  }
  return report;
}

std::vector<GradientCheckReport> check_pretraining_gradients(Model<double>& model, const StepInputs<double>& inputs,
                                                             const EmbeddingQueue<double>& image_queue,
                                                             const EmbeddingQueue<double>& text_queue,
                                                             const LossOptions& loss_options,
                                                             const GradientCheckOptions& options,
                                                             std::uint64_t seed) {
  StepPlan plan;
  {
    Rng negatives = make_rng(seed, "negatives");
    Rng masks = make_rng(seed, "mask");
    Tape<double> tape;
    pretraining_losses(model, tape, inputs, image_queue, text_queue, loss_options, plan, &negatives, &masks);
  }
  using Pick = Var<double> (*)(const LossTerms<double>&);
  const std::vector<std::pair<std::string, Pick>> components = {
      {"itc", [](const LossTerms<double>& t) { return t.itc; }},
      {"itm", [](const LossTerms<double>& t) { return t.itm; }},
      {"mlm", [](const LossTerms<double>& t) { return t.mlm; }},
      {"imc", [](const LossTerms<double>& t) { return t.imc; }},
      {"total", [](const LossTerms<double>& t) { return t.total; }},
  };
  std::vector<GradientCheckReport> reports;
  Rng rng = make_rng(seed, "gradient_check");
  for (const auto& [name, pick] : components) {
    auto fn = [&, pick = pick](Tape<double>& tape) {
      return pick(pretraining_losses(model, tape, inputs, image_queue, text_queue, loss_options, plan));
    };
    reports.push_back(gradient_check(model.parameters(), fn, options, rng, name));
  }
  return reports;
}

}  // namespace pitl
