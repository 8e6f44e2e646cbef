#pragma once

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "phytrack/ata.hpp"
#include "phytrack/fmr.hpp"
#include "phytrack/head.hpp"
#include "phytrack/tfe.hpp"

namespace phytrack {

// Full network: owns the parameter store and the four sub-modules.
// Module construction order is fixed, so initialization is deterministic
// for a given seed.
class PhyModel {
 public:
  explicit PhyModel(ModelConfig cfg = {}, std::uint64_t seed = 0)
      : cfg_(cfg), store_(seed), tfe_(store_, cfg), ata_(store_, cfg),
        fmr_(store_, cfg), head_(store_, cfg) {}

  const ModelConfig& config() const { return cfg_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }

  Tfe& tfe() { return tfe_; }
  Ata& ata() { return ata_; }
  Fmr& fmr() { return fmr_; }
  Head& head() { return head_; }
  const Tfe& tfe() const { return tfe_; }
  const Ata& ata() const { return ata_; }
  const Fmr& fmr() const { return fmr_; }
  const Head& head() const { return head_; }

 private:
  ModelConfig cfg_;
  ParamStore store_;
  Tfe tfe_;
  Ata ata_;
  Fmr fmr_;
  Head head_;
};

// ---------------------------------------------------------------------------
// checkpoint I/O: magic header, name->shape manifest, float32 LE blobs

inline constexpr char kCheckpointMagic[8] = {'P', 'H', 'Y', 'T', '0', '0', '0', '1'};

inline void save_checkpoint(const ParamStore& store, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
  f.write(kCheckpointMagic, 8);
  const std::uint32_t count = static_cast<std::uint32_t>(store.all().size());
  f.write(reinterpret_cast<const char*>(&count), 4);
  for (const auto& [name, p] : store.all()) {
    const std::uint32_t len = static_cast<std::uint32_t>(name.size());
    f.write(reinterpret_cast<const char*>(&len), 4);
    f.write(name.data(), len);
    const std::uint8_t ndim = static_cast<std::uint8_t>(p->val.ndim());
    f.write(reinterpret_cast<const char*>(&ndim), 1);
    for (int i = 0; i < p->val.ndim(); ++i) {
      const std::int32_t d = p->val.dim(i);
      f.write(reinterpret_cast<const char*>(&d), 4);
    }
    const std::uint8_t dtype = 0;  // float32
    f.write(reinterpret_cast<const char*>(&dtype), 1);
  }
  for (const auto& [name, p] : store.all()) {
    std::vector<float> blob(p->val.size());
    for (std::size_t i = 0; i < blob.size(); ++i)
      blob[i] = static_cast<float>(p->val[i]);
    f.write(reinterpret_cast<const char*>(blob.data()),
            static_cast<std::streamsize>(blob.size() * sizeof(float)));
  }
  if (!f) throw std::runtime_error("short write on checkpoint: " + path);
}

// Loads a checkpoint into an already-constructed store. The manifest must
// match the model exactly; any difference is reported name by name.
inline void load_checkpoint(ParamStore& store, const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("not a checkpoint (bad magic): " + path);
  std::uint32_t count = 0;
  f.read(reinterpret_cast<char*>(&count), 4);

  struct Entry {
    std::string name;
    std::vector<int> shape;
  };
  std::vector<Entry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t len = 0;
    f.read(reinterpret_cast<char*>(&len), 4);
    std::string name(len, '\0');
    f.read(name.data(), len);
    std::uint8_t ndim = 0;
    f.read(reinterpret_cast<char*>(&ndim), 1);
    std::vector<int> shape(ndim);
    for (int d = 0; d < ndim; ++d) {
      std::int32_t v = 0;
      f.read(reinterpret_cast<char*>(&v), 4);
      shape[d] = v;
    }
    std::uint8_t dtype = 0;
    f.read(reinterpret_cast<char*>(&dtype), 1);
    if (dtype != 0) throw std::runtime_error("checkpoint: unsupported dtype");
    entries.push_back({std::move(name), std::move(shape)});
  }
  if (!f) throw std::runtime_error("truncated checkpoint manifest: " + path);

  // diff the manifest against the live store
  std::ostringstream diff;
  for (const auto& e : entries) {
    if (!store.has(e.name)) {
      diff << "  checkpoint-only: " << e.name << "\n";
    } else if (store.get(e.name)->val.shape() != e.shape) {
      diff << "  shape mismatch: " << e.name << " model "
           << store.get(e.name)->val.shape_str() << " vs checkpoint (";
      for (std::size_t i = 0; i < e.shape.size(); ++i)
        diff << (i ? "," : "") << e.shape[i];
      diff << ")\n";
    }
  }
  for (const auto& [name, p] : store.all()) {
    bool found = false;
    for (const auto& e : entries)
      if (e.name == name) {
        found = true;
        break;
      }
    if (!found) diff << "  model-only: " << name << "\n";
  }
  if (!diff.str().empty())
    throw std::runtime_error("checkpoint/model manifest mismatch:\n" + diff.str());

  for (const auto& e : entries) {
    Var p = store.get(e.name);
    std::vector<float> blob(p->val.size());
    f.read(reinterpret_cast<char*>(blob.data()),
           static_cast<std::streamsize>(blob.size() * sizeof(float)));
    for (std::size_t i = 0; i < blob.size(); ++i)
      p->val[i] = static_cast<double>(blob[i]);
  }
  if (!f) throw std::runtime_error("truncated checkpoint blobs: " + path);
}

}  // namespace phytrack
