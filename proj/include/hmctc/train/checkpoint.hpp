#pragma once

// Model checkpoints on disk: a directory holding the parameter container
// (model.bin), a JSON sidecar with the architecture and schedule state
// (model.json) and, optionally, the Adam moments (optimizer.bin).

#include "hmctc/numeric/serialize.hpp"
#include "hmctc/train/adam.hpp"
#include "hmctc/train/schedule.hpp"
#include "hmctc/multitask/model.hpp"

#include <json.hpp>

#include <filesystem>

namespace hmctc::train {

inline constexpr const char* kCheckpointFormat = "hmctc-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline nlohmann::ordered_json encoder_to_json(const encoder::EncoderConfig& c) {
  return {{"num_layers", c.num_layers}, {"hidden", c.hidden}, {"dropout", c.dropout}, {"input_dim", c.input_dim}};
}

inline encoder::EncoderConfig encoder_from_json(const nlohmann::json& j) {
  encoder::EncoderConfig c;
  c.num_layers = j.at("num_layers").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.input_dim = j.at("input_dim").get<int>();
  c.validate();
  return c;
}

inline nlohmann::ordered_json schedule_to_json(const ScheduleState& s) {
  nlohmann::ordered_json j;
  j["lr"] = s.lr;
  j["updates"] = s.updates;
  j["history"] = s.history;
  j["best"] = s.best ? nlohmann::ordered_json(*s.best) : nlohmann::ordered_json();
  j["no_improve"] = s.no_improve;
  j["halvings"] = s.halvings;
  return j;
}

inline ScheduleState schedule_from_json(const nlohmann::json& j) {
  ScheduleState s;
  s.lr = j.at("lr").get<double>();
  s.updates = j.at("updates").get<long long>();
  s.history = j.at("history").get<std::vector<double>>();
  if (!j.at("best").is_null()) s.best = j.at("best").get<std::size_t>();
  s.no_improve = j.at("no_improve").get<int>();
  s.halvings = j.at("halvings").get<int>();
  return s;
}

struct Checkpoint {
  multitask::Model model;
  std::optional<ScheduleState> schedule;
  std::optional<AdamState> adam;
  nlohmann::json extra;
};

namespace detail {

inline void write_json(const std::filesystem::path& p, const nlohmann::ordered_json& j) {
  std::ofstream os(p);
  if (!os) throw std::runtime_error("cannot open " + p.string() + " for writing");
  os << j.dump(2) << '\n';
  if (!os) throw std::runtime_error("write failed: " + p.string());
}

inline nlohmann::json read_json(const std::filesystem::path& p) {
  std::ifstream is(p);
  if (!is) throw std::runtime_error("cannot open " + p.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

}  // namespace detail

// `extra` is stored verbatim under the "extra" key (run config, phase, ...).
inline void save_checkpoint(const std::filesystem::path& dir, multitask::Model& model,
                            const ScheduleState* schedule = nullptr, const AdamState* adam = nullptr,
                            const nlohmann::ordered_json& extra = nlohmann::ordered_json::object()) {
  std::filesystem::create_directories(dir);
  const auto params = model.parameters();
  save_parameters((dir / "model.bin").string(), params);
  nlohmann::ordered_json meta;
  meta["format"] = kCheckpointFormat;
  meta["version"] = kCheckpointVersion;
  meta["encoder"] = encoder_to_json(model.config());
  meta["subword_classes"] = model.has_subword_head() ? model.subword_head()->classes() : 0;
  meta["phone_classes"] = model.has_phone_head() ? model.phone_head()->classes() : 0;
  meta["aux_layer"] = model.aux_layer();
  meta["schedule"] = schedule ? schedule_to_json(*schedule) : nlohmann::ordered_json();
  meta["extra"] = extra;
  detail::write_json(dir / "model.json", meta);
  if (adam && !adam->m.empty()) {
    if (adam->m.size() != params.size()) throw ShapeError("Adam state does not match the parameter list");
    std::vector<NamedTensor> recs;
    for (std::size_t k = 0; k < params.size(); ++k) {
      recs.push_back({"m." + params[k]->name, adam->m[k]});
      recs.push_back({"v." + params[k]->name, adam->v[k]});
    }
    recs.push_back({"step", Tensor::from_rows({{static_cast<double>(adam->step)}})});
    std::ofstream os(dir / "optimizer.bin", std::ios::binary);
    write_tensors(os, recs);
    if (!os) throw std::runtime_error("write failed: " + (dir / "optimizer.bin").string());
  } else {
    std::filesystem::remove(dir / "optimizer.bin");
  }
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto meta = detail::read_json(dir / "model.json");
  if (meta.value("format", "") != kCheckpointFormat) throw FormatError(dir.string() + " is not a model checkpoint");
  if (meta.value("version", 0) != kCheckpointVersion) throw FormatError("unsupported checkpoint version");
  Checkpoint ck;
  try {
    ck.model = multitask::Model(encoder_from_json(meta.at("encoder")), meta.at("subword_classes").get<std::size_t>(),
                                meta.at("phone_classes").get<std::size_t>(), meta.at("aux_layer").get<int>(), 0);
    if (!meta.at("schedule").is_null()) ck.schedule = schedule_from_json(meta.at("schedule"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(dir.string() + "/model.json: " + e.what());
  }
  ck.extra = meta.value("extra", nlohmann::json::object());
  const auto params = ck.model.parameters();
  load_parameters((dir / "model.bin").string(), params);
  if (std::filesystem::exists(dir / "optimizer.bin")) {
    std::ifstream is(dir / "optimizer.bin", std::ios::binary);
    std::map<std::string, Tensor> recs;
    for (auto& r : read_tensors(is)) recs.emplace(std::move(r.name), std::move(r.value));
    AdamState st;
    for (const auto* p : params) {
      auto m = recs.find("m." + p->name);
      auto v = recs.find("v." + p->name);
      if (m == recs.end() || v == recs.end()) throw FormatError("optimizer state lacks " + p->name);
      if (!m->second.same_shape(p->value) || !v->second.same_shape(p->value)) {
        throw FormatError("optimizer state shape mismatch for " + p->name);
      }
      st.m.push_back(m->second);
      st.v.push_back(v->second);
    }
    auto step = recs.find("step");
    if (step == recs.end()) throw FormatError("optimizer state lacks the step count");
    st.step = static_cast<long long>(step->second[0]);
    ck.adam = std::move(st);
  }
  return ck;
}

}  // namespace hmctc::train
