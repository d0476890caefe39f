#include "protoseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <sstream>

namespace protoseg {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kCheckpointVersion = 1;

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
  }
  return v;
}

std::string mode_name(InitMode m) { return m == InitMode::kUnion ? "union" : "average"; }

InitMode parse_mode(const std::string& s) {
  if (s == "union") return InitMode::kUnion;
  if (s == "average") return InitMode::kAverage;
  throw FormatError("unknown m0_mode '" + s + "' (expected union or average)");
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace

fs::path payload_path(const fs::path& manifest) { return fs::path(manifest.string() + ".bin"); }

void save_checkpoint(const RpNetModel& model, const CheckpointInfo& info, const fs::path& path) {
  const auto params = model.named_parameters();
  json manifest;
  manifest["version"] = kCheckpointVersion;
  manifest["Z"] = model.config.z;
  manifest["d"] = model.config.radius;
  manifest["alpha"] = model.config.alpha;
  manifest["t_train"] = model.config.t_train;
  manifest["t_infer"] = model.config.t_infer;
  manifest["m0_mode"] = mode_name(model.config.m0_mode);
  manifest["recurse_binary"] = model.config.recurse_binary;
  manifest["seed"] = info.seed;
  manifest["epochs_trained"] = info.epochs_trained;
  manifest["payload"] = payload_path(path).filename().string();
  manifest["blocks"] = json::array();
  std::vector<std::uint32_t> words;
  for (const auto& p : params) {
    manifest["blocks"].push_back({{"name", p.name}, {"shape", p.var.shape()}});
    for (float v : p.var.value().values()) words.push_back(to_little(std::bit_cast<std::uint32_t>(v)));
  }
  {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << manifest.dump(2) << "\n";
  }
  std::ofstream bin(payload_path(path), std::ios::binary | std::ios::trunc);
  if (!bin) throw IoError("cannot write " + payload_path(path).string());
  bin.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(words.size() * 4));
  if (!bin) throw IoError("failed writing " + payload_path(path).string());
}

LoadedCheckpoint load_checkpoint(const fs::path& path) {
  const json manifest = read_json(path);
  LoadedCheckpoint out;
  ModelConfig cfg;
  std::vector<std::pair<std::string, Shape>> blocks;
  try {
    if (manifest.at("version").get<int>() != kCheckpointVersion) throw FormatError("unsupported checkpoint version");
    cfg.z = manifest.at("Z").get<int>();
    cfg.radius = manifest.at("d").get<int>();
    cfg.alpha = manifest.at("alpha").get<double>();
    cfg.t_train = manifest.value("t_train", cfg.t_train);
    cfg.t_infer = manifest.value("t_infer", cfg.t_infer);
    cfg.m0_mode = parse_mode(manifest.value("m0_mode", std::string("union")));
    cfg.recurse_binary = manifest.value("recurse_binary", false);
    out.info.seed = manifest.at("seed").get<std::uint64_t>();
    out.info.epochs_trained = manifest.at("epochs_trained").get<int>();
    for (const auto& b : manifest.at("blocks")) {
      blocks.emplace_back(b.at("name").get<std::string>(), b.at("shape").get<Shape>());
    }
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }

  out.model = init_model(cfg, 0);
  auto params = out.model.named_parameters();
  if (params.size() != blocks.size()) throw FormatError("checkpoint block count does not match the model layout");
  std::size_t total = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != blocks[i].first || params[i].var.shape() != blocks[i].second) {
      throw FormatError("checkpoint block " + blocks[i].first + " " + shape_str(blocks[i].second) +
                        " does not match model block " + params[i].name + " " + shape_str(params[i].var.shape()));
    }
    total += shape_numel(blocks[i].second);
  }

  std::ifstream bin(payload_path(path), std::ios::binary);
  if (!bin) throw IoError("missing checkpoint payload " + payload_path(path).string());
  std::vector<char> bytes{std::istreambuf_iterator<char>(bin), std::istreambuf_iterator<char>()};
  if (bytes.size() != total * 4) {
    throw FormatError("checkpoint payload has " + std::to_string(bytes.size()) + " bytes, manifest needs " +
                      std::to_string(total * 4));
  }
  std::size_t offset = 0;
  for (auto& p : params) {
    auto& values = p.var.mutable_value();
    for (std::size_t k = 0; k < values.size(); ++k, offset += 4) {
      std::uint32_t w;
      std::memcpy(&w, bytes.data() + offset, 4);
      values[k] = std::bit_cast<float>(to_little(w));
    }
  }
  return out;
}

void apply_config_file(const fs::path& path, ModelConfig& model, TrainConfig& train) {
  const json cfg = read_json(path);
  try {
    if (cfg.contains("model")) {
      const json& m = cfg["model"];
      model.z = m.value("Z", model.z);
      model.radius = m.value("d", model.radius);
      model.alpha = m.value("alpha", model.alpha);
      model.t_infer = m.value("t_infer", model.t_infer);
      if (m.contains("m0_mode")) model.m0_mode = parse_mode(m["m0_mode"].get<std::string>());
      model.recurse_binary = m.value("recurse_binary", model.recurse_binary);
    }
    if (cfg.contains("train")) {
      const json& t = cfg["train"];
      train.lr = t.value("lr", train.lr);
      train.epochs = t.value("epochs", train.epochs);
      train.lr_decay_every = t.value("lr_decay_every", train.lr_decay_every);
      train.lr_decay = t.value("lr_decay", train.lr_decay);
      train.beta = t.value("beta", train.beta);
      train.t_train = t.value("t_train", train.t_train);
      train.episodes_per_epoch = t.value("episodes_per_epoch", train.episodes_per_epoch);
      train.seed = t.value("seed", train.seed);
      train.align_loss = t.value("align_loss", train.align_loss);
      train.remove_holdout = t.value("remove_holdout", train.remove_holdout);
      train.holdout_class = t.value("holdout_class", train.holdout_class);
      train.shots = t.value("shots", train.shots);
      train.eps_ce = t.value("eps_ce", train.eps_ce);
      train.eps_dice = t.value("eps_dice", train.eps_dice);
    }
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::vector<std::string> describe(const ModelConfig& m) {
  std::ostringstream os;
  os << "model Z=" << m.z << " d=" << m.radius << " alpha=" << m.alpha << " t_train=" << m.t_train
     << " t_infer=" << m.t_infer << " m0_mode=" << mode_name(m.m0_mode)
     << " recurse_binary=" << (m.recurse_binary ? "true" : "false");
  return {os.str()};
}

std::vector<std::string> describe(const TrainConfig& t) {
  std::ostringstream os;
  os << "train lr=" << t.lr << " epochs=" << t.epochs << " lr_decay=" << t.lr_decay << "/" << t.lr_decay_every
     << " beta=" << t.beta << " t_train=" << t.t_train << " episodes_per_epoch=" << t.episodes_per_epoch
     << " seed=" << t.seed << " align_loss=" << (t.align_loss ? "true" : "false")
     << " remove_holdout=" << (t.remove_holdout ? "true" : "false") << " holdout_class=" << t.holdout_class
     << " shots=" << t.shots << " eps_ce=" << t.eps_ce
     << " eps_dice=" << t.eps_dice;
  return {os.str()};
}

}  // namespace protoseg
