#include "laneatt/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>

#include "laneatt/errors.hpp"

namespace laneatt {

namespace {

constexpr char kMagic[4] = {'L', 'A', 'T', 'T'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kMaxRank = 8;

void put_bytes(std::ostream& out, std::uint64_t v, int nbytes) {
    char buf[8];
    for (int i = 0; i < nbytes; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(buf, nbytes);
}

std::uint64_t get_bytes(std::istream& in, int nbytes, const char* what) {
    char buf[8];
    in.read(buf, nbytes);
    if (in.gcount() != nbytes) throw DataError(std::string("truncated checkpoint while reading ") + what);
    std::uint64_t v = 0;
    for (int i = 0; i < nbytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const CheckpointEntries& entries) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open checkpoint for writing: " + path);

    out.write(kMagic, 4);
    put_bytes(out, kVersion, 4);
    put_bytes(out, entries.size(), 4);
    for (const auto& [name, tensor] : entries) {
        if (name.size() > 0xFFFF) throw DataError("checkpoint entry name too long: " + name);
        if (tensor.rank() > kMaxRank) throw DataError("checkpoint tensor rank too large for: " + name);
        put_bytes(out, name.size(), 2);
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_bytes(out, static_cast<std::uint64_t>(tensor.rank()), 1);
        for (int e : tensor.shape) put_bytes(out, static_cast<std::uint64_t>(e), 8);
        for (double v : tensor.data) put_bytes(out, std::bit_cast<std::uint64_t>(v), 8);
    }
    if (!out) throw DataError("write failed for checkpoint: " + path);
}

CheckpointEntries load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);

    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || !std::equal(magic, magic + 4, kMagic)) {
        throw DataError("not a checkpoint file (bad magic): " + path);
    }
    const auto version = static_cast<std::uint32_t>(get_bytes(in, 4, "version"));
    if (version != kVersion) {
        throw DataError("unsupported checkpoint version " + std::to_string(version) + " in " + path);
    }
    const auto count = static_cast<std::uint32_t>(get_bytes(in, 4, "entry count"));

    CheckpointEntries entries;
    entries.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = static_cast<std::size_t>(get_bytes(in, 2, "name length"));
        std::string name(name_len, '\0');
        in.read(name.data(), static_cast<std::streamsize>(name_len));
        if (in.gcount() != static_cast<std::streamsize>(name_len)) {
            throw DataError("truncated checkpoint while reading a name");
        }
        const auto rank = static_cast<std::uint8_t>(get_bytes(in, 1, "rank"));
        if (rank == 0 || rank > kMaxRank) {
            throw DataError("invalid rank " + std::to_string(rank) + " for entry " + name);
        }
        Shape shape(rank);
        std::size_t numel = 1;
        for (auto& e : shape) {
            const std::uint64_t ext = get_bytes(in, 8, "extent");
            if (ext == 0 || ext > (1ULL << 31)) {
                throw DataError("invalid extent " + std::to_string(ext) + " for entry " + name);
            }
            e = static_cast<int>(ext);
            numel *= static_cast<std::size_t>(ext);
            if (numel > (1ULL << 31)) throw DataError("oversized tensor for entry " + name);
        }
        std::vector<double> data(numel);
        for (auto& v : data) v = std::bit_cast<double>(get_bytes(in, 8, "payload"));
        entries.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    return entries;
}

}  // namespace laneatt
