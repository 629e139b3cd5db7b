#include "apa/phonetics/phonetics.hpp"

#include <algorithm>
#include <sstream>

namespace apa::phonetics {

namespace {

// 39-phone stress-free CMU inventory, grouped by articulation trait.
const std::array<std::pair<const char*, Trait>, 39> kCmuTraits = {{
    {"AA", Trait::Vowel},     {"AE", Trait::Vowel},     {"AH", Trait::Vowel},
    {"AO", Trait::Vowel},     {"AW", Trait::Vowel},     {"AY", Trait::Vowel},
    {"EH", Trait::Vowel},     {"ER", Trait::Vowel},     {"EY", Trait::Vowel},
    {"IH", Trait::Vowel},     {"IY", Trait::Vowel},     {"OW", Trait::Vowel},
    {"OY", Trait::Vowel},     {"UH", Trait::Vowel},     {"UW", Trait::Vowel},
    {"B", Trait::Stop},       {"D", Trait::Stop},       {"G", Trait::Stop},
    {"K", Trait::Stop},       {"P", Trait::Stop},       {"T", Trait::Stop},
    {"CH", Trait::Affricate}, {"JH", Trait::Affricate},
    {"DH", Trait::Fricative}, {"F", Trait::Fricative},  {"S", Trait::Fricative},
    {"SH", Trait::Fricative}, {"TH", Trait::Fricative}, {"V", Trait::Fricative},
    {"Z", Trait::Fricative},  {"ZH", Trait::Fricative},
    {"HH", Trait::Aspirate},
    {"L", Trait::Liquid},     {"R", Trait::Liquid},
    {"M", Trait::Nasal},      {"N", Trait::Nasal},      {"NG", Trait::Nasal},
    {"W", Trait::Semivowel},  {"Y", Trait::Semivowel},
}};

const char* kTraitNames[kTraitCount] = {
    "other", "vowel", "stop", "affricate", "fricative",
    "aspirate", "liquid", "nasal", "semivowel",
};

}  // namespace

const char* trait_name(Trait t) { return kTraitNames[static_cast<int>(t)]; }

Trait trait_from_name(const std::string& name) {
    for (int i = 0; i < kTraitCount; ++i)
        if (name == kTraitNames[i]) return static_cast<Trait>(i);
    throw Error("unknown articulation trait name: " + name);
}

PhoneVocab::PhoneVocab() {
    symbols_.reserve(kVocabSize);
    symbols_.push_back(kPadSymbol);
    symbols_.push_back(kMaskSymbol);
    symbols_.push_back(kUnkSymbol);
    for (const auto& [sym, trait] : kCmuTraits) {
        (void)trait;
        symbols_.push_back(sym);
    }
    for (int i = 0; i < static_cast<int>(symbols_.size()); ++i) index_[symbols_[i]] = i;
}

int PhoneVocab::phone_to_id(const std::string& symbol) const {
    auto it = index_.find(symbol);
    return it == index_.end() ? kUnkId : it->second;
}

const std::string& PhoneVocab::id_to_phone(int id) const {
    if (id < 0 || id >= kVocabSize)
        throw Error("phone id " + std::to_string(id) + " outside [0, 42)");
    return symbols_[static_cast<std::size_t>(id)];
}

bool PhoneVocab::contains(const std::string& symbol) const {
    return index_.count(symbol) != 0;
}

TraitTable::TraitTable() {
    for (const auto& [sym, trait] : kCmuTraits) map_.emplace(sym, trait);
}

TraitTable TraitTable::from_tsv(const std::string& path) {
    TraitTable table;
    table.map_.clear();
    std::istringstream in(read_text_file(path));
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw Error(path + ":" + std::to_string(lineno) + ": expected SYMBOL<TAB>trait");
        std::string sym = line.substr(0, tab);
        std::string trait = line.substr(tab + 1);
        if (!trait.empty() && trait.back() == '\r') trait.pop_back();
        table.map_[sym] = trait_from_name(trait);
    }
    // Every inventory phone must be mapped.
    for (const auto& [sym, trait] : kCmuTraits) {
        (void)trait;
        if (!table.map_.count(sym))
            throw Error(path + ": trait table misses inventory phone " + std::string(sym));
    }
    return table;
}

Trait TraitTable::trait_of(const std::string& symbol) const {
    auto it = map_.find(symbol);
    return it == map_.end() ? Trait::Other : it->second;
}

VcClass TraitTable::vc_of(const std::string& symbol) const {
    return vc_of_trait(trait_of(symbol));
}

int duration_class(int frame_count) {
    if (frame_count < 1) throw Error("duration_class: zero-length phone (frame count 0)");
    return std::min(frame_count, kDurationClassCount);
}

int frames_of_span(double start_s, double end_s) {
    return static_cast<int>(std::llround((end_s - start_s) / kAlignerFrameSeconds));
}

std::string strip_stress(const std::string& label) {
    std::size_t n = label.size();
    while (n > 0 && label[n - 1] >= '0' && label[n - 1] <= '9') --n;
    return label.substr(0, n);
}

const PhoneVocab& vocab() {
    static const PhoneVocab v;
    return v;
}

const TraitTable& default_traits() {
    static const TraitTable t;
    return t;
}

}  // namespace apa::phonetics
