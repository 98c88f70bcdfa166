#include "patchdef/serialize.hpp"

#include <fstream>

#include "json.hpp"

namespace patchdef::nn {

namespace {
constexpr char kMagic[4] = {'P', 'D', 'C', 'K'};

using json = nlohmann::ordered_json;

void write_blob(std::ofstream& os, const Tensor& t) {
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(sizeof(float) * t.numel()));
}

Tensor read_blob(std::ifstream& is, const std::vector<int>& shape) {
  Tensor t(shape);
  is.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(sizeof(float) * t.numel()));
  if (!is) throw std::runtime_error("checkpoint: truncated tensor data");
  return t;
}
}  // namespace

void Checkpoint::save(const std::filesystem::path& path) const {
  std::filesystem::create_directories(path.parent_path());
  json meta;
  meta["version"] = version;
  meta["stage"] = stage;
  meta["seed"] = seed;
  meta["config_hash"] = config_hash;
  meta["rng_state"] = rng_state;
  meta["scalars"] = scalars;
  json jgroups = json::object();
  for (const auto& [gname, pm] : groups) {
    json entries = json::array();
    for (const auto& [pname, var] : pm.items)
      entries.push_back({{"name", pname}, {"shape", var.value().shape()}});
    jgroups[gname] = entries;
  }
  meta["groups"] = jgroups;
  json jopts = json::object();
  for (const auto& [oname, state] : optims) {
    json jopt = json::object();
    jopt["t"] = state.t;
    json names = json::array();
    for (const auto& [pname, mv] : state.moments)
      names.push_back({{"name", pname}, {"shape", mv.first.shape()}});
    jopt["entries"] = names;
    jopts[oname] = jopt;
  }
  meta["optims"] = jopts;
  const std::string meta_str = meta.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for write");
  os.write(kMagic, 4);
  uint64_t len = meta_str.size();
  os.write(reinterpret_cast<const char*>(&len), sizeof(len));
  os.write(meta_str.data(), static_cast<std::streamsize>(len));
  for (const auto& [gname, pm] : groups)
    for (const auto& [pname, var] : pm.items) write_blob(os, var.value());
  for (const auto& [oname, state] : optims)
    for (const auto& [pname, mv] : state.moments) {
      write_blob(os, mv.first);
      write_blob(os, mv.second);
    }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != std::string(kMagic, 4))
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  uint64_t len = 0;
  is.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string meta_str(len, '\0');
  is.read(meta_str.data(), static_cast<std::streamsize>(len));
  if (!is) throw std::runtime_error("checkpoint: truncated metadata");
  json meta = json::parse(meta_str);

  Checkpoint ck;
  ck.version = meta.at("version").get<int>();
  if (ck.version != 1)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(ck.version));
  ck.stage = meta.at("stage").get<int>();
  ck.seed = meta.at("seed").get<uint64_t>();
  ck.config_hash = meta.at("config_hash").get<std::string>();
  ck.rng_state = meta.at("rng_state").get<std::string>();
  if (meta.contains("scalars"))
    ck.scalars = meta.at("scalars").get<std::map<std::string, double>>();

  for (const auto& [gname, entries] : meta.at("groups").items()) {
    ParamMap pm;
    for (const auto& e : entries) {
      auto shape = e.at("shape").get<std::vector<int>>();
      pm.add(e.at("name").get<std::string>(), Var(read_blob(is, shape), true));
    }
    ck.groups.emplace(gname, std::move(pm));
  }
  if (meta.contains("optims"))
    for (const auto& [oname, jopt] : meta.at("optims").items()) {
      Adam::State state;
      state.t = jopt.at("t").get<int64_t>();
      for (const auto& e : jopt.at("entries")) {
        auto shape = e.at("shape").get<std::vector<int>>();
        Tensor m = read_blob(is, shape);
        Tensor v = read_blob(is, shape);
        state.moments.emplace_back(e.at("name").get<std::string>(),
                                   std::make_pair(std::move(m), std::move(v)));
      }
      ck.optims.emplace(oname, std::move(state));
    }
  return ck;
}

}  // namespace patchdef::nn
