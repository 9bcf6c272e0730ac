#include "ddfx/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "json.hpp"

#include "ddfx/errors.hpp"
#include "ddfx/scene.hpp"

namespace ddfx {

namespace {

using json = nlohmann::ordered_json;

constexpr char kMagic[4] = {'D', 'D', 'F', 'X'};

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_str(std::string& out, const std::string& s) {
    put_u64(out, s.size());
    out += s;
}

class Reader {
public:
    explicit Reader(const std::string& b) : b_(b) {}

    std::uint64_t u64(const char* what) { return uint(8, what); }
    std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(uint(4, what)); }

    std::string str(const char* what) {
        const std::uint64_t n = u64(what);
        need(n, what);
        std::string s = b_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    double f64(const char* what) { return std::bit_cast<double>(u64(what)); }

    std::size_t remaining() const { return b_.size() - pos_; }
    std::size_t pos() const { return pos_; }

    void need(std::uint64_t n, const char* what) const {
        if (n > remaining())
            throw ParseError("checkpoint: truncated while reading " + std::string(what) + " at byte " +
                             std::to_string(pos_));
    }

private:
    std::uint64_t uint(int bytes, const char* what) {
        need(static_cast<std::uint64_t>(bytes), what);
        std::uint64_t v = 0;
        for (int i = 0; i < bytes; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
        pos_ += static_cast<std::size_t>(bytes);
        return v;
    }

    const std::string& b_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string checkpoint_tables_json() {
    const auto& t = scene::category_tables();
    json box = json::object(), map = json::object();
    for (const auto& [k, v] : t.box) box[std::to_string(k)] = v;
    for (const auto& [k, v] : t.map) map[std::to_string(k)] = v;
    return json{{"box", box}, {"map", map}, {"vocabulary", scene::caption_vocabulary()}}.dump();
}

std::string checkpoint_to_bytes(const Checkpoint& ck) {
    std::string out(kMagic, 4);
    put_u32(out, kCheckpointVersion);
    put_str(out, config_to_string(ck.config));
    put_str(out, checkpoint_tables_json());

    std::map<std::string, std::vector<const std::pair<const std::string, Tensor>*>> groups;
    for (const auto& entry : ck.params.all()) groups[ParamStore::group_of(entry.first)].push_back(&entry);
    put_u32(out, static_cast<std::uint32_t>(groups.size()));
    for (const auto& [g, entries] : groups) {
        put_str(out, g);
        put_u32(out, static_cast<std::uint32_t>(entries.size()));
        for (const auto* e : entries) {
            const Tensor& t = e->second;
            put_str(out, e->first);
            put_u32(out, static_cast<std::uint32_t>(t.rank()));
            for (auto d : t.shape()) put_u64(out, static_cast<std::uint64_t>(d));
            for (double x : t.vec()) put_u64(out, std::bit_cast<std::uint64_t>(x));
        }
    }
    return out;
}

Checkpoint checkpoint_from_bytes(const std::string& bytes) {
    if (bytes.size() < 4 || bytes.compare(0, 4, kMagic, 4) != 0) throw ParseError("checkpoint: bad magic");
    Reader r(bytes);
    r.need(4, "magic");
    r.u32("magic");
    const std::uint32_t version = r.u32("version");
    if (version != kCheckpointVersion)
        throw ParseError("checkpoint: unsupported format version " + std::to_string(version));

    Checkpoint ck;
    ck.config = config_from_string(r.str("config"));
    const std::string tables = r.str("tables");
    if (tables != checkpoint_tables_json())
        throw ValidationError("checkpoint: category tables or vocabulary differ from this build");

    const std::uint32_t n_groups = r.u32("group count");
    for (std::uint32_t gi = 0; gi < n_groups; ++gi) {
        const std::string group = r.str("group name");
        const std::uint32_t n_params = r.u32("parameter count");
        for (std::uint32_t pi = 0; pi < n_params; ++pi) {
            const std::string name = r.str("parameter name");
            if (ParamStore::group_of(name) != group)
                throw ParseError("checkpoint: parameter " + name + " listed under group " + group);
            if (ck.params.contains(name)) throw ParseError("checkpoint: duplicate parameter " + name);
            const std::uint32_t rank = r.u32("rank");
            if (rank > 8) throw ParseError("checkpoint: parameter " + name + " has rank " + std::to_string(rank));
            Shape shape;
            std::uint64_t count = 1;
            for (std::uint32_t k = 0; k < rank; ++k) {
                const std::uint64_t d = r.u64("dimension");
                if (d == 0 || d > (std::uint64_t{1} << 32) || count > (std::uint64_t{1} << 40) / d)
                    throw ParseError("checkpoint: parameter " + name + " has invalid dimension " + std::to_string(d));
                count *= d;
                shape.push_back(static_cast<std::int64_t>(d));
            }
            r.need(count * 8, name.c_str());
            std::vector<double> data(count);
            for (auto& x : data) x = r.f64("data");
            ck.params.add(name, Tensor(shape, std::move(data)));
        }
    }
    if (r.remaining() != 0)
        throw ParseError("checkpoint: " + std::to_string(r.remaining()) + " trailing bytes after byte " +
                         std::to_string(r.pos()));
    return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    const std::string bytes = checkpoint_to_bytes(ck);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write checkpoint " + path.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open checkpoint " + path.string());
    const std::string bytes{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
    try {
        return checkpoint_from_bytes(bytes);
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

}  // namespace ddfx
