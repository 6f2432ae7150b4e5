#include "unlearn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "unlearn/models.hpp"

namespace unlearn {

std::string_view to_string(EntryRole role) {
  switch (role) {
    case EntryRole::kParam: return "param";
    case EntryRole::kMask: return "mask";
    case EntryRole::kLoraA: return "lora_A";
    case EntryRole::kLoraB: return "lora_B";
    case EntryRole::kFlag: return "flag";
  }
  return "?";
}

namespace {

constexpr const char* kLoraMetaSuffix = ".lora_meta";

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  void raw(const char* p, std::size_t n) { out_.insert(out_.end(), p, p + n); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}

  void need(std::size_t n, const char* what) const {
    if (in_.size() - pos_ < n) {
      throw IntegrityError(std::string("checkpoint truncated while reading ") + what);
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return in_[pos_++];
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string str(const char* what) {
    const std::uint32_t n = u32(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

EntryRole entry_role(ParamRole role) {
  switch (role) {
    case ParamRole::kLoraA: return EntryRole::kLoraA;
    case ParamRole::kLoraB: return EntryRole::kLoraB;
    case ParamRole::kParam: break;
  }
  return EntryRole::kParam;
}

CheckpointEntry tensor_entry(const std::string& name, EntryRole role, const Tensor& t) {
  return {name, role, t.shape(), std::vector<float>(t.data().begin(), t.data().end())};
}

}  // namespace

CheckpointFile to_checkpoint(Model<float>& model) {
  CheckpointFile file;
  file.model_name = model.name();
  for (const auto& nl : model.layers()) {
    if (nl.layer->kind() != LayerKind::kLinear && nl.layer->kind() != LayerKind::kConv2d) continue;
    auto& wl = static_cast<WeightLayer<float>&>(*nl.layer);
    if (!wl.has_adapter()) continue;
    const auto& ad = wl.adapter();
    file.entries.push_back({nl.path + kLoraMetaSuffix, EntryRole::kFlag, {2},
                            {static_cast<float>(ad.rank), static_cast<float>(ad.alpha)}});
  }
  for (const auto& np : model.parameters()) {
    const Parameter<float>& p = *np.param;
    file.entries.push_back(tensor_entry(np.name, entry_role(np.role), p.value));
    if (p.has_mask()) {
      CheckpointEntry m{np.name, EntryRole::kMask, p.value.shape(), std::vector<float>(p.mask.size())};
      for (std::size_t i = 0; i < p.mask.size(); ++i) m.values[i] = p.mask[i] ? 1.0f : 0.0f;
      file.entries.push_back(std::move(m));
    }
    file.entries.push_back({np.name, EntryRole::kFlag, {1}, {p.trainable ? 1.0f : 0.0f}});
  }
  return file;
}

Model<float> from_checkpoint(const CheckpointFile& file) {
  const ModelSpec spec = ModelSpec::parse(file.model_name);
  Model<float> model = build_model<float>(spec, 0);

  std::map<std::string, WeightLayer<float>*> weight_layers;
  for (const auto& nl : model.layers()) {
    if (nl.layer->kind() == LayerKind::kLinear || nl.layer->kind() == LayerKind::kConv2d) {
      weight_layers[nl.path] = static_cast<WeightLayer<float>*>(nl.layer);
    }
  }
  using Key = std::pair<std::string, EntryRole>;
  std::map<Key, const CheckpointEntry*> by_key;
  std::size_t meta_count = 0;
  for (const auto& e : file.entries) {
    if (!by_key.emplace(Key{e.name, e.role}, &e).second) {
      throw IntegrityError("duplicate checkpoint entry " + e.name + " (" + std::string(to_string(e.role)) + ")");
    }
    if (e.role == EntryRole::kFlag && e.name.ends_with(kLoraMetaSuffix)) {
      const std::string path = e.name.substr(0, e.name.size() - std::strlen(kLoraMetaSuffix));
      auto it = weight_layers.find(path);
      if (it == weight_layers.end() || e.values.size() != 2) {
        throw IntegrityError("adapter metadata for unknown layer " + path);
      }
      WeightLayer<float>& wl = *it->second;
      LoraAdapter<float> ad;
      ad.rank = static_cast<std::size_t>(e.values[0]);
      ad.alpha = static_cast<double>(e.values[1]);
      if (ad.rank == 0) throw IntegrityError("adapter rank 0 for " + path);
      ad.a = Parameter<float>({ad.rank, wl.d_in()});
      ad.b = Parameter<float>({wl.d_out(), ad.rank});
      wl.set_adapter(std::move(ad));
      ++meta_count;
    }
  }

  std::size_t used = meta_count;
  for (auto& np : model.parameters()) {
    Parameter<float>& p = *np.param;
    auto vit = by_key.find({np.name, entry_role(np.role)});
    if (vit == by_key.end()) throw IntegrityError("checkpoint lacks values for " + np.name);
    const CheckpointEntry& ve = *vit->second;
    if (ve.shape != p.value.shape()) {
      throw IntegrityError("shape mismatch for " + np.name + ": file " + shape_to_string(ve.shape) + ", model " +
                           shape_to_string(p.value.shape()));
    }
    p.value = Tensor(ve.shape, ve.values);
    ++used;
    if (auto mit = by_key.find({np.name, EntryRole::kMask}); mit != by_key.end()) {
      const CheckpointEntry& me = *mit->second;
      if (me.values.size() != p.numel()) throw IntegrityError("mask size mismatch for " + np.name);
      p.mask.resize(me.values.size());
      for (std::size_t i = 0; i < me.values.size(); ++i) p.mask[i] = me.values[i] != 0.0f ? 1 : 0;
      ++used;
    }
    auto fit = by_key.find({np.name, EntryRole::kFlag});
    if (fit == by_key.end() || fit->second->values.size() != 1) {
      throw IntegrityError("checkpoint lacks trainable flag for " + np.name);
    }
    p.trainable = fit->second->values[0] != 0.0f;
    ++used;
  }
  if (used != file.entries.size()) {
    throw IntegrityError("checkpoint has " + std::to_string(file.entries.size() - used) +
                         " entries that match no model parameter");
  }
  return model;
}

std::vector<std::uint8_t> encode_checkpoint(const CheckpointFile& file) {
  Writer w;
  w.raw(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.str(file.model_name);
  w.u32(static_cast<std::uint32_t>(file.entries.size()));
  for (const auto& e : file.entries) {
    w.str(e.name);
    w.u8(static_cast<std::uint8_t>(e.role));
    w.u32(static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) w.u32(static_cast<std::uint32_t>(d));
    for (float v : e.values) w.f32(v);
  }
  return w.take();
}

CheckpointFile decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw FormatError("not a checkpoint: bad magic bytes");
  }
  Reader r(bytes);
  for (int i = 0; i < 4; ++i) r.u8("magic");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  CheckpointFile file;
  file.model_name = r.str("model name");
  const std::uint32_t count = r.u32("entry count");
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.name = r.str("entry name");
    const std::uint8_t role = r.u8("entry role");
    if (role > static_cast<std::uint8_t>(EntryRole::kFlag)) {
      throw FormatError("unknown entry role " + std::to_string(role) + " for " + e.name);
    }
    e.role = static_cast<EntryRole>(role);
    const std::uint32_t rank = r.u32("entry rank");
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint32_t dim = r.u32("entry shape");
      if (dim == 0) throw IntegrityError("zero dimension in entry " + e.name);
      e.shape.push_back(dim);
      numel *= dim;
    }
    r.need(numel * 4, "entry values");
    e.values.resize(numel);
    for (auto& v : e.values) v = r.f32("entry values");
    file.entries.push_back(std::move(e));
  }
  if (r.remaining() != 0) {
    throw IntegrityError("checkpoint has " + std::to_string(r.remaining()) + " trailing bytes");
  }
  return file;
}

void save_checkpoint(Model<float>& model, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(to_checkpoint(model));
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed for " + path.string());
}

Model<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return from_checkpoint(decode_checkpoint(bytes));
}

}  // namespace unlearn
