#include "apa/nn/registry.hpp"

#include <cstring>

namespace apa::nn {

namespace {

constexpr char kMagic[4] = {'M', 'T', 'P', 'C'};

void put_u32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    put_u32(out, bits);
}

class Reader {
public:
    Reader(const std::string& content, const std::string& path)
        : content_(content), path_(path) {}

    std::uint32_t u32() {
        if (pos_ + 4 > content_.size())
            throw Error("checkpoint " + path_ + ": truncated file");
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i)
            v = (v << 8) | static_cast<std::uint8_t>(content_[pos_ + static_cast<std::size_t>(i)]);
        pos_ += 4;
        return v;
    }

    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }

    std::string bytes(std::size_t n) {
        if (pos_ + n > content_.size())
            throw Error("checkpoint " + path_ + ": truncated file");
        std::string out = content_.substr(pos_, n);
        pos_ += n;
        return out;
    }

    bool at_end() const { return pos_ == content_.size(); }

private:
    const std::string& content_;
    std::string path_;
    std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const Registry& registry, const std::string& path) {
    std::string out;
    out.append(kMagic, 4);
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(registry.size()));
    for (const auto& [name, t] : registry) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put_u32(out, static_cast<std::uint32_t>(t->shape.size()));
        for (int d : t->shape) put_u32(out, static_cast<std::uint32_t>(d));
        for (float v : t->data) put_f32(out, v);
    }
    write_file_atomic(path, out);
}

Registry load_checkpoint(const std::string& path) {
    const std::string content = read_text_file(path);
    if (content.size() < 12 || std::memcmp(content.data(), kMagic, 4) != 0)
        throw Error("checkpoint " + path + ": bad magic (not a checkpoint file)");
    Reader in(content, path);
    (void)in.bytes(4);  // magic, already verified
    const std::uint32_t version = in.u32();
    if (version != kCheckpointVersion)
        throw Error("checkpoint " + path + ": unknown version " + std::to_string(version));
    const std::uint32_t count = in.u32();
    Registry registry;
    for (std::uint32_t e = 0; e < count; ++e) {
        const std::uint32_t name_len = in.u32();
        const std::string name = in.bytes(name_len);
        const std::uint32_t rank = in.u32();
        Shape shape(rank);
        for (std::uint32_t r = 0; r < rank; ++r) shape[r] = static_cast<int>(in.u32());
        auto t = make_tensor<float>(shape);
        for (float& v : t->data) v = in.f32();
        if (!registry.emplace(name, std::move(t)).second)
            throw Error("checkpoint " + path + ": duplicate tensor name \"" + name + "\"");
    }
    if (!in.at_end()) throw Error("checkpoint " + path + ": trailing bytes after last entry");
    return registry;
}

}  // namespace apa::nn
