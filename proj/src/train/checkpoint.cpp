#include "rage/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <unordered_map>

#include <zlib.h>

#include "rage/config_io.hpp"

namespace rage {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'R', 'A', 'G', 'E'};
constexpr std::size_t kMaxRank = 8;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(std::uint8_t(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(std::uint8_t(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(const std::uint8_t* p, std::size_t n) : p_(p), n_(n) {}

  std::size_t remaining() const { return n_ - pos_; }
  void need(std::size_t n, const char* what) const {
    if (n > remaining()) throw CheckpointError(std::string("truncated ") + what);
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return p_[pos_++];
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(p_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(p_[pos_++]) << (8 * i);
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string str(const char* what) {
    const std::uint64_t n = u64(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(p_ + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  const std::uint8_t* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const std::uint8_t* p, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths.
  while (n > 0) {
    const uInt chunk = n > (1u << 30) ? (1u << 30) : uInt(n);
    crc = crc32(crc, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return std::uint32_t(crc);
}

json header_json(const Checkpoint& c) {
  json history = json::array();
  for (const auto& e : c.history) {
    history.push_back({{"epoch", e.epoch},
                       {"train_loss", finite_or_null(e.train_loss)},
                       {"val_loss", finite_or_null(e.val_loss)},
                       {"grad_norm", finite_or_null(e.grad_norm)}});
  }
  return {{"model", c.model},
          {"train", c.train},
          {"epoch", c.epoch},
          {"best_epoch", c.best_epoch},
          {"best_val_loss", finite_or_null(c.best_val_loss)},
          {"since_improvement", c.since_improvement},
          {"adam_step", c.adam_step},
          {"rng_state", c.rng_state},
          {"precision", c.precision},
          {"history", history}};
}

void read_header(const json& j, Checkpoint& c) {
  c.model = j.at("model").get<ModelConfig>();
  c.train = j.at("train").get<TrainConfig>();
  c.epoch = j.at("epoch").get<std::size_t>();
  c.best_epoch = j.at("best_epoch").get<std::size_t>();
  c.best_val_loss = number_or_inf(j.at("best_val_loss"));
  c.since_improvement = j.at("since_improvement").get<std::size_t>();
  c.adam_step = j.at("adam_step").get<std::uint64_t>();
  c.rng_state = j.at("rng_state").get<std::string>();
  c.precision = j.at("precision").get<std::string>();
  for (const auto& e : j.at("history")) {
    EpochRecord r;
    r.epoch = e.at("epoch").get<std::size_t>();
    r.train_loss = number_or_inf(e.at("train_loss"));
    r.val_loss = number_or_inf(e.at("val_loss"));
    r.grad_norm = number_or_inf(e.at("grad_norm"));
    c.history.push_back(r);
  }
}

template <typename V>
NamedTensor named(const std::string& name, const Shape& shape, const V& values) {
  NamedTensor t{name, shape, {}};
  t.data.reserve(values.size());
  for (auto v : values) t.data.push_back(static_cast<float>(v));
  return t;
}

}  // namespace

const NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.str(header_json(ckpt).dump());
  w.u64(ckpt.tensors.size());
  for (const auto& t : ckpt.tensors) {
    if (t.shape.size() > kMaxRank) {
      throw CheckpointError("tensor '" + t.name + "': rank above " + std::to_string(kMaxRank));
    }
    if (shape_numel(t.shape) != t.data.size()) {
      throw CheckpointError("tensor '" + t.name + "': data does not match shape " +
                            shape_str(t.shape));
    }
    w.str(t.name);
    w.u8(std::uint8_t(t.shape.size()));
    for (auto e : t.shape) w.u64(e);
    for (float v : t.data) w.f32(v);
  }
  auto& buf = w.buffer();
  const std::uint32_t crc = crc_of(buf.data(), buf.size());
  w.u32(crc);
  return std::move(buf);
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 12) throw CheckpointError("file too short to be a checkpoint");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw CheckpointError("bad magic");
  const std::size_t body = bytes.size() - 4;
  Reader tail(bytes.data() + body, 4);
  const std::uint32_t stored = tail.u32("CRC");
  if (crc_of(bytes.data(), body) != stored) {
    throw CheckpointError("CRC mismatch (file truncated or corrupt)");
  }
  Reader r(bytes.data() + 4, body - 4);
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint c;
  try {
    read_header(json::parse(r.str("header")), c);
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& ex) {
    throw CheckpointError(std::string("bad header: ") + ex.what());
  }
  const std::uint64_t count = r.u64("tensor count");
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.str("tensor name");
    const std::size_t rank = r.u8("rank");
    if (rank > kMaxRank) throw CheckpointError("tensor '" + t.name + "': bad rank");
    std::uint64_t n = 1;
    for (std::size_t a = 0; a < rank; ++a) {
      const std::uint64_t e = r.u64("extent");
      if (e != 0 && n > r.remaining() / e) {
        throw CheckpointError("tensor '" + t.name + "': extents exceed file size");
      }
      n *= e;
      t.shape.push_back(e);
    }
    r.need(n * 4, "tensor data");
    t.data.resize(n);
    for (auto& v : t.data) v = r.f32("tensor data");
    c.tensors.push_back(std::move(t));
  }
  if (r.remaining() != 0) throw CheckpointError("trailing bytes after tensors");
  return c;
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw CheckpointError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const CheckpointError& ex) {
    throw CheckpointError(path.string() + ": " + ex.what());
  }
}

template <typename T>
Checkpoint make_checkpoint(const Predictor<T>& model, const TrainConfig& train,
                           const TrainerState<T>& state) {
  Checkpoint c;
  c.model = model.config();
  c.train = train;
  c.epoch = state.epoch;
  c.best_epoch = state.stopper.best_epoch();
  c.best_val_loss = state.stopper.best_loss();
  c.since_improvement = state.stopper.since_improvement();
  c.adam_step = state.adam.step;
  c.rng_state = state.rng_state;
  c.precision = sizeof(T) == sizeof(float) ? "f32" : "f64";
  c.history = state.history;
  for (auto& r : c.history) r.seconds = 0.0;
  const auto& params = model.parameters().params();
  for (const auto& p : params) c.tensors.push_back(named(p.name, p.tensor.shape(), p.tensor.data()));
  for (const char* kind : {"m", "v"}) {
    const auto& moments = kind[0] == 'm' ? state.adam.m : state.adam.v;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const std::string name = std::string("adam.") + kind + "." + params[i].name;
      if (i < moments.size() && !moments[i].empty()) {
        c.tensors.push_back(named(name, params[i].tensor.shape(), moments[i]));
      } else {
        c.tensors.push_back(named(name, params[i].tensor.shape(),
                                  std::vector<float>(params[i].tensor.numel(), 0.0f)));
      }
    }
  }
  return c;
}

template <typename T>
void apply_checkpoint(const Checkpoint& ckpt, Predictor<T>& model, TrainerState<T>* state) {
  std::unordered_map<std::string, const NamedTensor*> by_name;
  for (const auto& t : ckpt.tensors) {
    if (!by_name.emplace(t.name, &t).second) {
      throw CheckpointError("duplicate tensor '" + t.name + "'");
    }
  }
  auto& params = model.parameters().params();
  auto require = [&](const std::string& name, const Shape& shape) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError("checkpoint lacks tensor '" + name + "'");
    if (it->second->shape != shape) {
      throw CheckpointError("tensor '" + name + "': checkpoint shape " +
                            shape_str(it->second->shape) + ", model expects " +
                            shape_str(shape));
    }
    return it->second;
  };
  std::vector<const NamedTensor*> values, m, v;
  for (const auto& p : params) values.push_back(require(p.name, p.tensor.shape()));
  if (state) {
    for (const auto& p : params) m.push_back(require("adam.m." + p.name, p.tensor.shape()));
    for (const auto& p : params) v.push_back(require("adam.v." + p.name, p.tensor.shape()));
  }
  for (const auto& t : ckpt.tensors) {
    std::string base = t.name;
    if (base.rfind("adam.m.", 0) == 0 || base.rfind("adam.v.", 0) == 0) base = base.substr(7);
    if (!model.parameters().find(base)) {
      throw CheckpointError("checkpoint has tensor '" + t.name + "' unknown to the model");
    }
  }
  if (!(ckpt.model == model.config())) {
    throw CheckpointError("checkpoint model configuration differs from the model's");
  }

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].tensor.mutable_data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = T(values[i]->data[k]);
  }
  if (!state) return;
  state->epoch = ckpt.epoch;
  state->stopper = EarlyStopping(ckpt.train.patience);
  state->stopper.restore(ckpt.history.size(), ckpt.best_epoch, ckpt.best_val_loss,
                         ckpt.since_improvement);
  state->adam.step = ckpt.adam_step;
  state->adam.m.assign(params.size(), {});
  state->adam.v.assign(params.size(), {});
  for (std::size_t i = 0; i < params.size(); ++i) {
    state->adam.m[i].assign(m[i]->data.begin(), m[i]->data.end());
    state->adam.v[i].assign(v[i]->data.begin(), v[i]->data.end());
  }
  state->rng_state = ckpt.rng_state;
  state->history = ckpt.history;
}

template <typename T>
std::unique_ptr<Predictor<T>> load_predictor(const Checkpoint& ckpt) {
  auto model = std::make_unique<Predictor<T>>(ckpt.model, InitOptions{ckpt.train.seed});
  apply_checkpoint(ckpt, *model);
  return model;
}

#define RAGE_INSTANTIATE_CKPT(T)                                                        \
  template Checkpoint make_checkpoint(const Predictor<T>&, const TrainConfig&,         \
                                      const TrainerState<T>&);                         \
  template void apply_checkpoint(const Checkpoint&, Predictor<T>&, TrainerState<T>*); \
  template std::unique_ptr<Predictor<T>> load_predictor(const Checkpoint&);

RAGE_INSTANTIATE_CKPT(float)
RAGE_INSTANTIATE_CKPT(double)

}  // namespace rage
