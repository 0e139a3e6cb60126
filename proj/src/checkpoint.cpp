#include "msrg/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "msrg/errors.hpp"

namespace msrg {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; big-endian hosts are unsupported");

void ParameterMap::add(std::string name, Tensor tensor) {
    if (has(name)) throw UsageError("parameter map: duplicate layer name '" + name + "'");
    names_.push_back(std::move(name));
    tensors_.push_back(std::move(tensor));
}

bool ParameterMap::has(const std::string& name) const { return index_of(name) >= 0; }

int64_t ParameterMap::index_of(const std::string& name) const {
    for (size_t i = 0; i < names_.size(); ++i) {
        if (names_[i] == name) return static_cast<int64_t>(i);
    }
    return -1;
}

Tensor& ParameterMap::get(const std::string& name) {
    const int64_t i = index_of(name);
    if (i < 0) throw UsageError("parameter map: no layer named '" + name + "'");
    return tensors_[static_cast<size_t>(i)];
}

const Tensor& ParameterMap::get(const std::string& name) const {
    const int64_t i = index_of(name);
    if (i < 0) throw UsageError("parameter map: no layer named '" + name + "'");
    return tensors_[static_cast<size_t>(i)];
}

int64_t ParameterMap::total_params() const {
    int64_t n = 0;
    for (const Tensor& t : tensors_) n += t.size();
    return n;
}

namespace {

constexpr char kMagic[4] = {'M', 'S', 'R', 'G'};

void write_bytes(std::ofstream& os, const void* data, size_t len) {
    os.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
}

}  // namespace

void save_checkpoint(const ParameterMap& map, const std::string& path) {
    nlohmann::json header;
    header["__metadata__"] = {
        {"kind", map.kind},
        {"feature_dim", map.feature_dim},
        {"layer_count", map.layer_count},
    };
    uint64_t offset = 0;
    for (size_t i = 0; i < map.size(); ++i) {
        const Tensor& t = map.tensor(i);
        const uint64_t nbytes = static_cast<uint64_t>(t.size()) * 4;
        header[map.name(i)] = {
            {"dtype", "f32"},
            {"shape", t.shape()},
            {"offset", offset},
            {"nbytes", nbytes},
        };
        offset += nbytes;
    }
    const std::string header_str = header.dump();

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError(CheckpointError::Kind::io, "cannot open '" + path + "' for writing");
    write_bytes(os, kMagic, 4);
    const uint32_t version = kCheckpointVersion;
    write_bytes(os, &version, 4);
    const uint64_t header_len = header_str.size();
    write_bytes(os, &header_len, 8);
    write_bytes(os, header_str.data(), header_str.size());
    for (size_t i = 0; i < map.size(); ++i) {
        const Tensor& t = map.tensor(i);
        write_bytes(os, t.data(), static_cast<size_t>(t.size()) * 4);
    }
    os.flush();
    if (!os) throw CheckpointError(CheckpointError::Kind::io, "write failed for '" + path + "'");
}

ParameterMap load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError(CheckpointError::Kind::io, "cannot open '" + path + "'");
    is.seekg(0, std::ios::end);
    const uint64_t file_size = static_cast<uint64_t>(is.tellg());
    is.seekg(0);

    char magic[4] = {};
    if (file_size < 16 || !is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
        std::ostringstream os;
        os << "'" << path << "': bad magic bytes [";
        for (int i = 0; i < 4; ++i) os << (i ? " " : "") << static_cast<int>(magic[i]);
        os << "], expected \"MSRG\"";
        throw CheckpointError(CheckpointError::Kind::bad_magic, os.str());
    }
    uint32_t version = 0;
    is.read(reinterpret_cast<char*>(&version), 4);
    if (version != kCheckpointVersion) {
        throw CheckpointError(CheckpointError::Kind::version_mismatch,
                              "'" + path + "': format version " + std::to_string(version) +
                                  ", expected " + std::to_string(kCheckpointVersion));
    }
    uint64_t header_len = 0;
    is.read(reinterpret_cast<char*>(&header_len), 8);
    if (16 + header_len > file_size) {
        throw CheckpointError(CheckpointError::Kind::truncated,
                              "'" + path + "': header extends past end of file");
    }
    std::string header_str(header_len, '\0');
    is.read(header_str.data(), static_cast<std::streamsize>(header_len));

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_str);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(CheckpointError::Kind::bad_header,
                              "'" + path + "': header is not valid JSON: " + e.what());
    }
    if (!header.is_object()) {
        throw CheckpointError(CheckpointError::Kind::bad_header, "'" + path + "': header not an object");
    }

    const uint64_t payload_size = file_size - 16 - header_len;

    ParameterMap map;
    if (header.contains("__metadata__")) {
        const auto& meta = header["__metadata__"];
        map.kind = meta.value("kind", std::string());
        map.feature_dim = meta.value("feature_dim", int64_t{0});
        map.layer_count = meta.value("layer_count", int64_t{0});
    }

    // JSON object keys are sorted; recover serialization order via offsets.
    struct Entry {
        std::string name;
        std::vector<int64_t> shape;
        uint64_t offset;
        uint64_t nbytes;
    };
    std::vector<Entry> entries;
    for (auto it = header.begin(); it != header.end(); ++it) {
        if (it.key() == "__metadata__") continue;
        const auto& desc = it.value();
        if (!desc.is_object() || !desc.contains("shape") || !desc.contains("offset") ||
            !desc.contains("nbytes")) {
            throw CheckpointError(CheckpointError::Kind::bad_header,
                                  "'" + path + "': malformed entry for tensor '" + it.key() + "'");
        }
        if (desc.value("dtype", std::string()) != "f32") {
            throw CheckpointError(CheckpointError::Kind::bad_header,
                                  "'" + path + "': unsupported dtype for tensor '" + it.key() + "'");
        }
        Entry e;
        e.name = it.key();
        e.shape = desc["shape"].get<std::vector<int64_t>>();
        e.offset = desc["offset"].get<uint64_t>();
        e.nbytes = desc["nbytes"].get<uint64_t>();
        int64_t numel = 1;
        for (int64_t d : e.shape) {
            if (d < 0) {
                throw CheckpointError(CheckpointError::Kind::bad_header,
                                      "'" + path + "': negative dimension for tensor '" + e.name + "'");
            }
            numel *= d;
        }
        if (static_cast<uint64_t>(numel) * 4 != e.nbytes) {
            throw CheckpointError(CheckpointError::Kind::bad_header,
                                  "'" + path + "': tensor '" + e.name + "' shape " +
                                      shape_to_string(e.shape) + " does not match nbytes " +
                                      std::to_string(e.nbytes));
        }
        if (e.offset + e.nbytes > payload_size) {
            throw CheckpointError(CheckpointError::Kind::truncated,
                                  "'" + path + "': tensor '" + e.name + "' extends past end of payload");
        }
        entries.push_back(std::move(e));
    }
    std::sort(entries.begin(), entries.end(),
              [](const Entry& a, const Entry& b) { return a.offset < b.offset; });
    for (size_t i = 1; i < entries.size(); ++i) {
        if (entries[i].offset < entries[i - 1].offset + entries[i - 1].nbytes) {
            throw CheckpointError(CheckpointError::Kind::offset_overlap,
                                  "'" + path + "': tensors '" + entries[i - 1].name + "' and '" +
                                      entries[i].name + "' overlap");
        }
    }

    std::vector<char> payload(payload_size);
    is.read(payload.data(), static_cast<std::streamsize>(payload_size));
    if (static_cast<uint64_t>(is.gcount()) != payload_size) {
        throw CheckpointError(CheckpointError::Kind::truncated, "'" + path + "': payload truncated");
    }

    for (const Entry& e : entries) {
        std::vector<float> data(e.nbytes / 4);
        std::memcpy(data.data(), payload.data() + e.offset, e.nbytes);
        map.add(e.name, Tensor(e.shape, std::move(data)));
    }
    return map;
}

bool merge_compatible(const ParameterMap& a, const ParameterMap& b, std::string* why) {
    std::set<std::string> only_a, only_b;
    for (const auto& n : a.names()) only_a.insert(n);
    for (const auto& n : b.names()) {
        if (!only_a.erase(n)) only_b.insert(n);
    }
    if (!only_a.empty() || !only_b.empty()) {
        if (why) {
            std::ostringstream os;
            os << "layer name sets differ;";
            if (!only_a.empty()) {
                os << " only in first:";
                for (const auto& n : only_a) os << " " << n;
            }
            if (!only_b.empty()) {
                os << " only in second:";
                for (const auto& n : only_b) os << " " << n;
            }
            *why = os.str();
        }
        return false;
    }
    std::ostringstream bad;
    bool ok = true;
    for (size_t i = 0; i < a.size(); ++i) {
        const std::string& name = a.name(i);
        const Tensor& ta = a.tensor(i);
        const Tensor& tb = b.get(name);
        if (ta.shape() != tb.shape()) {
            ok = false;
            bad << " " << name << " " << ta.shape_str() << " vs " << tb.shape_str();
        }
    }
    if (!ok && why) *why = "layer shapes differ:" + bad.str();
    return ok;
}

void assert_compatible(const std::vector<const ParameterMap*>& maps) {
    if (maps.size() < 2) throw UsageError("assert_compatible: need at least 2 maps");
    for (size_t i = 1; i < maps.size(); ++i) {
        std::string why;
        if (!merge_compatible(*maps[0], *maps[i], &why)) {
            throw IncompatibleError("maps 0 and " + std::to_string(i) + " incompatible: " + why);
        }
    }
}

uint64_t fnv1a(const void* data, size_t len, uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

uint64_t checksum(const ParameterMap& map) {
    uint64_t h = 0xcbf29ce484222325ULL;
    h = fnv1a(map.kind.data(), map.kind.size(), h);
    for (size_t i = 0; i < map.size(); ++i) {
        const std::string& name = map.name(i);
        const Tensor& t = map.tensor(i);
        h = fnv1a(name.data(), name.size(), h);
        h = fnv1a(t.shape().data(), t.shape().size() * sizeof(int64_t), h);
        h = fnv1a(t.data(), static_cast<size_t>(t.size()) * 4, h);
    }
    return h;
}

}  // namespace msrg
