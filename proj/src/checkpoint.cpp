#include "unicalli/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <map>

#include "unicalli/error.hpp"
#include "unicalli/image.hpp"

namespace unicalli {

namespace {

constexpr std::string_view kMagic = "UCAL1";

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void put_u32(std::string& out, std::uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    out.append(b, 4);
}

class Reader {
public:
    explicit Reader(std::string_view data) : data_(data) {}

    bool done() const { return pos_ == data_.size(); }

    std::uint32_t u32(const std::string& field) {
        need(4, field);
        std::uint32_t v;
        std::memcpy(&v, data_.data() + pos_, 4);
        pos_ += 4;
        return v;
    }

    std::string_view bytes(std::size_t n, const std::string& field) {
        need(n, field);
        auto s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }

private:
    void need(std::size_t n, const std::string& field) {
        if (data_.size() - pos_ < n) {
            throw Error("checkpoint truncated while reading " + field);
        }
    }

    std::string_view data_;
    std::size_t pos_ = 0;
};

// Configuration values are stored as floats; every field is a small integer
// or an exactly representable base.
std::vector<float> config_values(const ModelConfig& c) {
    return {static_cast<float>(c.latent_channels), static_cast<float>(c.latent_height),
            static_cast<float>(c.latent_width),    static_cast<float>(c.token_patch),
            static_cast<float>(c.d_model),         static_cast<float>(c.heads),
            static_cast<float>(c.blocks),          static_cast<float>(c.mlp_ratio),
            static_cast<float>(c.alphabet),        static_cast<float>(c.styles),
            static_cast<float>(c.scripts),         static_cast<float>(c.rope_base)};
}

ModelConfig config_from(const std::vector<float>& v) {
    if (v.size() != 12) throw Error("checkpoint field meta.config has " + std::to_string(v.size()) + " values, expected 12");
    ModelConfig c;
    c.latent_channels = static_cast<int>(v[0]);
    c.latent_height = static_cast<int>(v[1]);
    c.latent_width = static_cast<int>(v[2]);
    c.token_patch = static_cast<int>(v[3]);
    c.d_model = static_cast<int>(v[4]);
    c.heads = static_cast<int>(v[5]);
    c.blocks = static_cast<int>(v[6]);
    c.mlp_ratio = static_cast<int>(v[7]);
    c.alphabet = static_cast<int>(v[8]);
    c.styles = static_cast<int>(v[9]);
    c.scripts = static_cast<int>(v[10]);
    c.rope_base = v[11];
    c.validate();
    return c;
}

// 64-bit integers as four 16-bit limbs, each exact in float32.
std::vector<float> limbs(std::uint64_t v) {
    return {static_cast<float>(v & 0xffff), static_cast<float>((v >> 16) & 0xffff),
            static_cast<float>((v >> 32) & 0xffff), static_cast<float>((v >> 48) & 0xffff)};
}

std::uint64_t from_limbs(const std::vector<float>& v, const std::string& field) {
    if (v.size() != 4) throw Error("checkpoint field " + field + " must hold 4 values");
    std::uint64_t out = 0;
    for (int k = 3; k >= 0; --k) {
        float f = v[static_cast<std::size_t>(k)];
        if (!(f >= 0.0f && f < 65536.0f) || f != static_cast<float>(static_cast<std::uint32_t>(f))) {
            throw Error("checkpoint field " + field + " is corrupt");
        }
        out = (out << 16) | static_cast<std::uint64_t>(f);
    }
    return out;
}

TensorRecord record_of(const std::string& name, const Matrix<float>& m) {
    TensorRecord r;
    r.name = name;
    r.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
    r.values.assign(m.data(), m.data() + m.size());
    return r;
}

void append_weights(std::vector<TensorRecord>& out, const std::string& prefix, const Weights<float>& w) {
    w.for_each([&](const std::string& name, const Matrix<float>& m) { out.push_back(record_of(prefix + name, m)); });
}

void fill_weights(Weights<float>& w, const std::string& prefix, std::map<std::string, const TensorRecord*>& by_name) {
    w.for_each([&](const std::string& name, Matrix<float>& m) {
        auto it = by_name.find(prefix + name);
        if (it == by_name.end()) throw Error("checkpoint is missing tensor '" + prefix + name + "'");
        const TensorRecord& r = *it->second;
        if (r.dims.size() != 2 || r.dims[0] != m.rows() || r.dims[1] != m.cols()) {
            throw Error("checkpoint tensor '" + prefix + name + "' has the wrong shape");
        }
        std::memcpy(m.data(), r.values.data(), r.values.size() * sizeof(float));
        by_name.erase(it);
    });
}

} // namespace

std::string encode_records(const std::vector<TensorRecord>& records) {
    std::string out(kMagic);
    for (const auto& r : records) {
        std::size_t count = 1;
        for (auto d : r.dims) count *= d;
        if (count != r.values.size()) throw Error("tensor '" + r.name + "' dims do not match its value count");
        put_u32(out, static_cast<std::uint32_t>(r.name.size()));
        out += r.name;
        put_u32(out, static_cast<std::uint32_t>(r.dims.size()));
        for (auto d : r.dims) put_u32(out, d);
        out.append(reinterpret_cast<const char*>(r.values.data()), r.values.size() * sizeof(float));
    }
    return out;
}

std::vector<TensorRecord> decode_records(std::string_view data) {
    if (data.size() < kMagic.size() || data.substr(0, kMagic.size()) != kMagic) {
        throw Error("checkpoint has bad magic (expected \"UCAL1\")");
    }
    Reader in(data.substr(kMagic.size()));
    std::vector<TensorRecord> out;
    while (!in.done()) {
        const std::string at = "record " + std::to_string(out.size());
        TensorRecord r;
        std::uint32_t name_len = in.u32(at + " name length");
        if (name_len == 0 || name_len > 4096) throw Error("checkpoint " + at + " has an invalid name length");
        r.name = std::string(in.bytes(name_len, at + " name"));
        const std::string field = "tensor '" + r.name + "'";
        std::uint32_t rank = in.u32(field + " rank");
        if (rank > 8) throw Error("checkpoint " + field + " has an invalid rank");
        std::uint64_t count = 1;
        for (std::uint32_t k = 0; k < rank; ++k) {
            r.dims.push_back(in.u32(field + " dims"));
            count *= r.dims.back();
        }
        if (count > (data.size() / sizeof(float)) + 1) throw Error("checkpoint truncated while reading " + field + " values");
        auto raw = in.bytes(static_cast<std::size_t>(count) * sizeof(float), field + " values");
        r.values.resize(static_cast<std::size_t>(count));
        std::memcpy(r.values.data(), raw.data(), raw.size());
        out.push_back(std::move(r));
    }
    return out;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
    std::vector<TensorRecord> records;
    auto cv = config_values(ckpt.config);
    records.push_back({"meta.config", {static_cast<std::uint32_t>(cv.size())}, cv});
    records.push_back({"meta.step", {4}, limbs(static_cast<std::uint64_t>(ckpt.step))});
    records.push_back({"meta.seed", {4}, limbs(ckpt.seed)});
    append_weights(records, "", ckpt.weights);
    if (ckpt.has_optimizer) {
        append_weights(records, "adam.m.", ckpt.adam_m);
        append_weights(records, "adam.v.", ckpt.adam_v);
    }
    return encode_records(records);
}

Checkpoint decode_checkpoint(std::string_view data) {
    std::vector<TensorRecord> records = decode_records(data);
    std::map<std::string, const TensorRecord*> by_name;
    for (const auto& r : records) {
        if (!by_name.emplace(r.name, &r).second) throw Error("checkpoint has duplicate tensor '" + r.name + "'");
    }
    auto take = [&](const std::string& name) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw Error("checkpoint is missing field " + name);
        std::vector<float> v = it->second->values;
        by_name.erase(it);
        return v;
    };
    Checkpoint ckpt;
    ckpt.config = config_from(take("meta.config"));
    ckpt.step = static_cast<std::int64_t>(from_limbs(take("meta.step"), "meta.step"));
    ckpt.seed = from_limbs(take("meta.seed"), "meta.seed");
    ckpt.weights = init_weights<float>(ckpt.config, 0);
    fill_weights(ckpt.weights, "", by_name);
    ckpt.has_optimizer = by_name.count("adam.m.in.content.w") > 0;
    if (ckpt.has_optimizer) {
        ckpt.adam_m = ckpt.weights.zeros_like();
        ckpt.adam_v = ckpt.weights.zeros_like();
        fill_weights(ckpt.adam_m, "adam.m.", by_name);
        fill_weights(ckpt.adam_v, "adam.v.", by_name);
    }
    if (!by_name.empty()) throw Error("checkpoint has unexpected tensor '" + by_name.begin()->first + "'");
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    try {
        return decode_checkpoint(read_file(path));
    } catch (const Error& e) {
        throw Error(path.string() + ": " + e.what());
    }
}

} // namespace unicalli
