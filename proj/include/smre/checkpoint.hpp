#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "smre/errors.hpp"
#include "smre/model.hpp"
#include "smre/optim.hpp"
#include "smre/params.hpp"
#include "smre/tensor.hpp"

// Checkpoint file layout, all integers little-endian:
//   "SMRE" | u32 version | u32 entry count
//   per entry: u32 name length | name | u8 dtype | u8 rank | u64 dims[rank] | u64 payload offset
//   u64 payload byte count | payload
// Entries are the parameters in canonical order, then adam.m.<name> and
// adam.v.<name> in the same order, then meta.step and meta.epoch as [1]
// tensors. dtype codes: 1 = f32, 2 = f64.

namespace smre {

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename S>
constexpr std::uint8_t dtype_code() {
    return sizeof(S) == 4 ? 1 : 2;
}

inline void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }

inline void put_u32(std::string& out, std::uint32_t v) {
    out.append(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    out.append(reinterpret_cast<const char*>(&v), sizeof(v));
}

class ByteReader {
  public:
    explicit ByteReader(const std::string& buf) : buf_(buf) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(*take(1)); }

    std::uint32_t u32() {
        std::uint32_t v;
        std::memcpy(&v, take(sizeof(v)), sizeof(v));
        return v;
    }

    std::uint64_t u64() {
        std::uint64_t v;
        std::memcpy(&v, take(sizeof(v)), sizeof(v));
        return v;
    }

    std::string bytes(std::size_t n) { return std::string(take(n), n); }

    std::size_t remaining() const { return buf_.size() - pos_; }

    const char* take(std::size_t n) {
        if (pos_ + n > buf_.size()) throw IoError("checkpoint file truncated");
        const char* p = buf_.data() + pos_;
        pos_ += n;
        return p;
    }

  private:
    const std::string& buf_;
    std::size_t pos_ = 0;
};

}  // namespace detail

template <typename S>
std::string serialize_checkpoint(const ModelParams<S>& params, const AdamState<S>& opt,
                                 std::uint64_t epoch) {
    opt.check_matches(params);
    struct Entry {
        std::string name;
        Shape shape;
        const S* data;
        std::size_t n;
    };
    const S step_val = static_cast<S>(opt.step);
    const S epoch_val = static_cast<S>(epoch);
    std::vector<Entry> entries;
    for (const auto& [name, t] : params.items())
        entries.push_back({name, t.shape(), t.data(), t.size()});
    for (std::size_t i = 0; i < params.count(); ++i) {
        const auto& [name, t] = params.items()[i];
        entries.push_back({"adam.m." + name, t.shape(), opt.m[i].data(), opt.m[i].size()});
    }
    for (std::size_t i = 0; i < params.count(); ++i) {
        const auto& [name, t] = params.items()[i];
        entries.push_back({"adam.v." + name, t.shape(), opt.v[i].data(), opt.v[i].size()});
    }
    entries.push_back({"meta.step", {1}, &step_val, 1});
    entries.push_back({"meta.epoch", {1}, &epoch_val, 1});

    std::string out;
    out.append("SMRE", 4);
    detail::put_u32(out, kCheckpointVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(entries.size()));
    std::uint64_t offset = 0;
    for (const Entry& e : entries) {
        detail::put_u32(out, static_cast<std::uint32_t>(e.name.size()));
        out += e.name;
        detail::put_u8(out, detail::dtype_code<S>());
        detail::put_u8(out, static_cast<std::uint8_t>(e.shape.size()));
        for (std::size_t d : e.shape) detail::put_u64(out, d);
        detail::put_u64(out, offset);
        offset += e.n * sizeof(S);
    }
    detail::put_u64(out, offset);
    for (const Entry& e : entries)
        out.append(reinterpret_cast<const char*>(e.data), e.n * sizeof(S));
    return out;
}

template <typename S>
void save_checkpoint(const ModelParams<S>& params, const AdamState<S>& opt, std::uint64_t epoch,
                     const std::string& path) {
    const std::string blob = serialize_checkpoint(params, opt, epoch);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint file " + path);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw IoError("short write to checkpoint file " + path);
}

template <typename S>
struct LoadedCheckpoint {
    ModelParams<S> params;
    AdamState<S> opt;
    std::uint64_t epoch = 0;
};

template <typename S>
LoadedCheckpoint<S> deserialize_checkpoint(const std::string& buf) {
    detail::ByteReader r(buf);
    if (r.bytes(4) != "SMRE") throw IoError("not a checkpoint file (bad magic)");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version) + ", expected " +
                      std::to_string(kCheckpointVersion));
    const std::uint32_t n_entries = r.u32();
    struct Entry {
        std::string name;
        Shape shape;
        std::uint64_t offset;
        std::size_t n;
    };
    std::vector<Entry> entries;
    entries.reserve(n_entries);
    for (std::uint32_t i = 0; i < n_entries; ++i) {
        Entry e;
        e.name = r.bytes(r.u32());
        const std::uint8_t dtype = r.u8();
        if (dtype != detail::dtype_code<S>())
            throw IoError("checkpoint tensor " + e.name + ": stored dtype code " +
                          std::to_string(dtype) + " does not match the requested scalar type");
        const std::uint8_t rank = r.u8();
        e.n = 1;
        for (std::uint8_t d = 0; d < rank; ++d) {
            e.shape.push_back(static_cast<std::size_t>(r.u64()));
            e.n *= e.shape.back();
        }
        e.offset = r.u64();
        entries.push_back(std::move(e));
    }
    const std::uint64_t payload_bytes = r.u64();
    if (r.remaining() != payload_bytes) throw IoError("checkpoint payload size mismatch");
    const char* payload = r.take(payload_bytes);

    LoadedCheckpoint<S> out;
    bool saw_step = false, saw_epoch = false;
    S step_val = S(0), epoch_val = S(0);
    std::vector<std::pair<std::string, std::vector<S>>> moments_m, moments_v;
    auto read_values = [&](const Entry& e) {
        if (e.offset + e.n * sizeof(S) > payload_bytes)
            throw IoError("checkpoint tensor " + e.name + " extends past the payload");
        std::vector<S> v(e.n);
        std::memcpy(v.data(), payload + e.offset, e.n * sizeof(S));
        return v;
    };
    for (const Entry& e : entries) {
        if (e.name.rfind("adam.m.", 0) == 0) {
            moments_m.emplace_back(e.name.substr(7), read_values(e));
        } else if (e.name.rfind("adam.v.", 0) == 0) {
            moments_v.emplace_back(e.name.substr(7), read_values(e));
        } else if (e.name == "meta.step") {
            step_val = read_values(e)[0];
            saw_step = true;
        } else if (e.name == "meta.epoch") {
            epoch_val = read_values(e)[0];
            saw_epoch = true;
        } else {
            out.params.add(e.name, Tensor<S>::from(e.shape, read_values(e)));
        }
    }
    if (!saw_step || !saw_epoch) throw IoError("checkpoint is missing the meta entries");
    for (const auto& [name, t] : out.params.items()) {
        const std::vector<S>* m = nullptr;
        const std::vector<S>* v = nullptr;
        for (const auto& [n2, vals] : moments_m)
            if (n2 == name) m = &vals;
        for (const auto& [n2, vals] : moments_v)
            if (n2 == name) v = &vals;
        if (m == nullptr || v == nullptr)
            throw IoError("checkpoint is missing optimizer state for " + name);
        out.opt.m.push_back(*m);
        out.opt.v.push_back(*v);
    }
    out.opt.step = static_cast<std::int64_t>(step_val);
    out.epoch = static_cast<std::uint64_t>(epoch_val);
    out.opt.check_matches(out.params);
    return out;
}

template <typename S>
LoadedCheckpoint<S> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint file " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint<S>(buf);
}

/// Compares loaded parameters against the canonical table for these dims;
/// any mismatch is reported with the tensor's name.
template <typename S>
void check_checkpoint_dims(const ModelParams<S>& params, const ModelDims& dims) {
    const auto want = param_shapes(dims);
    if (params.count() != want.size())
        throw DimensionError("checkpoint carries " + std::to_string(params.count()) +
                             " tensors, expected " + std::to_string(want.size()));
    for (std::size_t i = 0; i < want.size(); ++i) {
        const auto& [name, t] = params.items()[i];
        if (name != want[i].first)
            throw DimensionError("checkpoint tensor order differs: found " + name + ", expected " +
                                 want[i].first);
        if (t.shape() != want[i].second)
            throw DimensionError("checkpoint tensor " + name + ": shape " + shape_str(t.shape()) +
                                 " does not match configured " + shape_str(want[i].second));
    }
}

}  // namespace smre
