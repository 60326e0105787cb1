#pragma once

// Phone-only pretraining of the lower encoder layers and initialization of
// a full model from the result.

#include "hmctc/multitask/model.hpp"
#include "hmctc/numeric/serialize.hpp"

#include <json.hpp>

#include <filesystem>

namespace hmctc::multitask {

struct PretrainCheckpoint {
  encoder::EncoderConfig encoder;  // num_layers == aux_layer
  std::vector<encoder::LstmLayerParams> layers;
  HeadParams phone;
  int aux_layer = 0;
  std::optional<double> dev_per;
  std::uint64_t seed = 0;

  ParameterRefs parameters() {
    ParameterRefs out;
    for (auto& l : layers) {
      auto p = l.parameters();
      out.insert(out.end(), p.begin(), p.end());
    }
    auto h = phone.parameters();
    out.insert(out.end(), h.begin(), h.end());
    return out;
  }
};

// Captures an i-layer phone model as a pretraining checkpoint.
inline PretrainCheckpoint make_pretrain_checkpoint(const Model& phone_model, std::optional<double> dev_per,
                                                   std::uint64_t seed) {
  if (!phone_model.has_phone_head() || phone_model.has_subword_head()) {
    throw CompatibilityError("a pretraining checkpoint holds a phone-only model");
  }
  if (phone_model.aux_layer() != phone_model.num_layers()) {
    throw CompatibilityError("the pretrained phone head must sit on the top layer");
  }
  return {phone_model.config(), phone_model.encoder().layers(), *phone_model.phone_head(), phone_model.aux_layer(),
          dev_per, seed};
}

// Layers 1..i come from the checkpoint; everything else keeps the fresh
// initialization drawn from `seed`. Regime pretrain has no phone head;
// pretrain_multitask carries the pretrained one over.
inline Model init_from_pretrained(const PretrainCheckpoint& ck, const encoder::EncoderConfig& cfg, Regime regime,
                                  std::size_t subword_classes, std::uint64_t seed) {
  if (regime != Regime::pretrain && regime != Regime::pretrain_multitask) {
    throw SpecError("regime " + to_string(regime) + " does not start from a pretrained model");
  }
  if (ck.aux_layer < 1 || ck.aux_layer > cfg.num_layers) {
    throw CompatibilityError("checkpoint has " + std::to_string(ck.aux_layer) + " layers but the model only " +
                             std::to_string(cfg.num_layers));
  }
  if (ck.layers.size() != static_cast<std::size_t>(ck.aux_layer)) {
    throw CompatibilityError("checkpoint layer count disagrees with its auxiliary layer");
  }
  const bool keep_phone = regime == Regime::pretrain_multitask;
  Model m(cfg, subword_classes, keep_phone ? ck.phone.classes() : 0, ck.aux_layer, seed);
  for (std::size_t l = 0; l < ck.layers.size(); ++l) {
    auto layer = ck.layers[l];
    auto dst = m.encoder().layers()[l].parameters();
    auto src = layer.parameters();
    for (std::size_t k = 0; k < dst.size(); ++k) {
      if (!dst[k]->value.same_shape(src[k]->value)) {
        throw CompatibilityError("shape mismatch for " + dst[k]->name + " between checkpoint and config");
      }
      dst[k]->value = src[k]->value;
    }
  }
  if (keep_phone) {
    if (ck.phone.w.value.rows() != static_cast<std::size_t>(cfg.tap_width())) {
      throw CompatibilityError("pretrained phone head width does not match the encoder");
    }
    m.phone_head()->w.value = ck.phone.w.value;
    m.phone_head()->b.value = ck.phone.b.value;
  }
  return m;
}

inline void save_pretrain(const std::filesystem::path& dir, PretrainCheckpoint& ck) {
  std::filesystem::create_directories(dir);
  save_parameters((dir / "pretrain.bin").string(), ck.parameters());
  nlohmann::ordered_json j;
  j["format"] = "hmctc-pretrain";
  j["version"] = 1;
  j["aux_layer"] = ck.aux_layer;
  j["hidden"] = ck.encoder.hidden;
  j["dropout"] = ck.encoder.dropout;
  j["input_dim"] = ck.encoder.input_dim;
  j["phone_classes"] = ck.phone.classes();
  j["dev_per"] = ck.dev_per ? nlohmann::ordered_json(*ck.dev_per) : nlohmann::ordered_json();
  j["seed"] = ck.seed;
  std::ofstream os(dir / "pretrain.json");
  os << j.dump(2) << '\n';
  if (!os) throw std::runtime_error("write failed: " + (dir / "pretrain.json").string());
}

inline PretrainCheckpoint load_pretrain(const std::filesystem::path& dir) {
  std::ifstream is(dir / "pretrain.json");
  if (!is) throw std::runtime_error("cannot open " + (dir / "pretrain.json").string());
  PretrainCheckpoint ck;
  std::size_t classes = 0;
  try {
    const auto j = nlohmann::json::parse(is);
    if (j.value("format", "") != "hmctc-pretrain") throw FormatError(dir.string() + " is not a pretraining checkpoint");
    ck.encoder.num_layers = j.at("aux_layer").get<int>();
    ck.encoder.hidden = j.at("hidden").get<int>();
    ck.encoder.dropout = j.at("dropout").get<double>();
    ck.encoder.input_dim = j.at("input_dim").get<int>();
    ck.aux_layer = ck.encoder.num_layers;
    classes = j.at("phone_classes").get<std::size_t>();
    if (!j.at("dev_per").is_null()) ck.dev_per = j.at("dev_per").get<double>();
    ck.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError((dir / "pretrain.json").string() + ": " + e.what());
  }
  const Model shell(ck.encoder, 0, classes, ck.aux_layer, 0);
  ck.layers = shell.encoder().layers();
  ck.phone = *shell.phone_head();
  load_parameters((dir / "pretrain.bin").string(), ck.parameters());
  return ck;
}

}  // namespace hmctc::multitask
