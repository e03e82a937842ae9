#include "ncadapt/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "ncadapt/config.hpp"
#include "ncadapt/errors.hpp"
#include "ncadapt/hash.hpp"
#include "ncadapt/rti.hpp"

namespace ncadapt {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::vector<std::byte> pack(std::span<const Tensor* const> tensors) {
  std::vector<std::byte> out;
  for (const Tensor* t : tensors) append_f32_le(out, t->data());
  return out;
}

void unpack(std::span<const std::byte> bytes, std::span<Tensor* const> tensors, const std::string& what) {
  std::size_t total = 0;
  for (const Tensor* t : tensors) total += 4 * t->size();
  if (bytes.size() != total)
    throw DataError(what + " holds " + std::to_string(bytes.size()) + " bytes, expected " + std::to_string(total));
  std::size_t off = 0;
  for (Tensor* t : tensors) {
    read_f32_le(bytes.subspan(off, 4 * t->size()), t->data());
    off += 4 * t->size();
  }
}

std::string hash_bytes(std::span<const std::byte> b) { return sha256_hex(b); }

json read_json(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return json::parse(std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  } catch (const json::exception& e) {
    throw DataError(path.string() + " is not valid JSON: " + e.what());
  }
}

}  // namespace

std::vector<std::pair<std::string, std::string>> tensor_hashes(const NcadaptModel& model) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const Param* p : model.parameters()) out.emplace_back(p->name, tensor_sha256(p->value));
  return out;
}

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ck) {
  if (std::filesystem::exists(dir / "manifest.json"))
    throw UsageError("checkpoint directory " + dir.string() + " already holds a checkpoint");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());

  const NcadaptModel& m = ck.model;
  const auto params = m.parameters();
  ordered_json manifest;
  manifest["schema_version"] = Checkpoint::kSchemaVersion;
  manifest["config_hash"] = ck.config_hash;
  manifest["stage"] = ck.stage;

  ordered_json model;
  model["arch"] = to_json(m.arch());
  model["policy"] = to_string(m.policy());
  model["perception_scope"] = to_string(m.scope());
  // Every random stream is keyed by this seed; there is no other RNG state.
  model["seed"] = m.seed();
  model["frozen"] = m.frozen();
  ordered_json domains = ordered_json::array();
  for (std::size_t d = 0; d < m.domain_count(); ++d) {
    const auto& e = m.domain(static_cast<int>(d));
    domains.push_back({{"label", e.label}, {"adapter", e.adapter}, {"perception", e.perception}});
  }
  model["domains"] = domains;
  manifest["model"] = model;

  ordered_json table = ordered_json::array();
  std::size_t offset = 0;
  std::vector<const Tensor*> values;
  for (const Param* p : params) {
    const std::size_t len = 4 * p->value.size();
    table.push_back({{"name", p->name},
                     {"shape", p->value.shape()},
                     {"offset", offset},
                     {"length", len},
                     {"trainable", p->trainable},
                     {"owner", p->owner}});
    offset += len;
    values.push_back(&p->value);
  }
  manifest["tensors"] = table;
  const auto weights = pack(values);
  manifest["weights_bytes"] = weights.size();
  manifest["weights_sha256"] = hash_bytes(weights);

  std::vector<std::byte> opt_bytes;
  if (ck.optimizer) {
    if (ck.optimizer->moments.size() != params.size()) throw UsageError("optimizer state does not match the model");
    std::vector<const Tensor*> mv;
    for (const auto& mo : ck.optimizer->moments) mv.push_back(&mo.m);
    for (const auto& mo : ck.optimizer->moments) mv.push_back(&mo.v);
    opt_bytes = pack(mv);
    manifest["optimizer"] = {{"step", ck.optimizer->step}, {"sha256", hash_bytes(opt_bytes)}};
  } else {
    manifest["optimizer"] = nullptr;
  }

  std::vector<std::byte> ewc_bytes;
  ordered_json anchors = ordered_json::array();
  for (const auto& s : ck.ewc) {
    std::vector<const Tensor*> t;
    for (const auto& r : s.reference) t.push_back(&r);
    for (const auto& f : s.fisher) t.push_back(&f);
    const auto b = pack(t);
    ewc_bytes.insert(ewc_bytes.end(), b.begin(), b.end());
    anchors.push_back({{"lambda", s.lambda}, {"names", s.names}});
  }
  manifest["ewc"] = anchors;
  if (!ck.ewc.empty()) manifest["ewc_sha256"] = hash_bytes(ewc_bytes);

  write_file(dir / "weights.bin", weights);
  if (ck.optimizer) write_file(dir / "optimizer.bin", opt_bytes);
  if (!ck.ewc.empty()) write_file(dir / "ewc.bin", ewc_bytes);
  const std::string text = manifest.dump(2) + "\n";
  write_file(dir / "manifest.json", std::as_bytes(std::span(text.data(), text.size())));
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "manifest.json")) throw DataError("no checkpoint manifest in " + dir.string());
  const json manifest = read_json(dir / "manifest.json");
  try {
    if (manifest.at("schema_version").get<int>() != Checkpoint::kSchemaVersion)
      throw DataError("checkpoint schema_version " + manifest.at("schema_version").dump() + " is not supported");
    const json& mj = manifest.at("model");
    NcadaptModel model(arch_from_json(mj.at("arch")), parse_freeze_policy(mj.at("policy").get<std::string>()),
                       parse_perception_scope(mj.at("perception_scope").get<std::string>()),
                       mj.at("seed").get<std::uint64_t>());
    for (const auto& d : mj.at("domains")) {
      const int id = model.add_domain(d.at("label").get<std::string>());
      if (model.domain(id).adapter != d.at("adapter").get<int>() ||
          model.domain(id).perception != d.at("perception").get<int>())
        throw DataError("checkpoint domain layout does not match its policy");
    }
    model.set_frozen(mj.at("frozen").get<bool>());

    const auto params = model.parameters();
    const json& table = manifest.at("tensors");
    if (table.size() != params.size())
      throw DataError("checkpoint lists " + std::to_string(table.size()) + " tensors, the model has " +
                      std::to_string(params.size()));
    std::size_t offset = 0;
    std::vector<Tensor*> values;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const json& e = table[i];
      Param& p = *params[i];
      if (e.at("name").get<std::string>() != p.name) throw DataError("unexpected tensor " + e.at("name").dump());
      if (e.at("shape").get<Shape>() != p.value.shape()) throw DataError("shape mismatch for " + p.name);
      if (e.at("offset").get<std::size_t>() != offset || e.at("length").get<std::size_t>() != 4 * p.value.size())
        throw DataError("offset table is not contiguous at " + p.name);
      if (e.at("owner").get<std::string>() != p.owner) throw DataError("owner mismatch for " + p.name);
      p.trainable = e.at("trainable").get<bool>();
      offset += 4 * p.value.size();
      values.push_back(&p.value);
    }
    const auto weights = read_file(dir / "weights.bin");
    if (weights.size() != manifest.at("weights_bytes").get<std::size_t>() || weights.size() != offset)
      throw DataError("weights.bin has " + std::to_string(weights.size()) + " bytes, expected " +
                      std::to_string(offset));
    if (hash_bytes(weights) != manifest.at("weights_sha256").get<std::string>())
      throw DataError("weights.bin does not match its recorded hash");
    unpack(weights, values, "weights.bin");

    Checkpoint ck{std::move(model), std::nullopt, {}, manifest.at("config_hash").get<std::string>(),
                  manifest.at("stage").get<std::size_t>()};

    const json& oj = manifest.at("optimizer");
    if (!oj.is_null()) {
      const auto bytes = read_file(dir / "optimizer.bin");
      if (hash_bytes(bytes) != oj.at("sha256").get<std::string>())
        throw DataError("optimizer.bin does not match its recorded hash");
      OptimizerState opt = OptimizerState::zeros_like(ck.model);
      opt.step = oj.at("step").get<std::uint64_t>();
      std::vector<Tensor*> mv;
      for (auto& mo : opt.moments) mv.push_back(&mo.m);
      for (auto& mo : opt.moments) mv.push_back(&mo.v);
      unpack(bytes, mv, "optimizer.bin");
      ck.optimizer = std::move(opt);
    }

    const json& anchors = manifest.at("ewc");
    if (!anchors.empty()) {
      const auto bytes = read_file(dir / "ewc.bin");
      if (hash_bytes(bytes) != manifest.at("ewc_sha256").get<std::string>())
        throw DataError("ewc.bin does not match its recorded hash");
      std::vector<Tensor*> slots;
      for (const auto& a : anchors) {
        EwcState s;
        s.lambda = a.at("lambda").get<double>();
        s.names = a.at("names").get<std::vector<std::string>>();
        for (const auto& n : s.names) {
          const Shape& shape = ck.model.param(n).value.shape();
          s.reference.push_back(Tensor::zeros(shape));
          s.fisher.push_back(Tensor::zeros(shape));
        }
        ck.ewc.push_back(std::move(s));
      }
      for (auto& s : ck.ewc) {
        for (auto& r : s.reference) slots.push_back(&r);
        for (auto& f : s.fisher) slots.push_back(&f);
      }
      unpack(bytes, slots, "ewc.bin");
    }
    return ck;
  } catch (const json::exception& e) {
    throw DataError("malformed checkpoint manifest: " + std::string(e.what()));
  } catch (const UsageError& e) {
    throw DataError("invalid checkpoint: " + std::string(e.what()));
  }
}

}  // namespace ncadapt
