#pragma once

// Static linguistic knowledge: the 39-phone inventory plus special tokens,
// articulation-trait and vowel/consonant lookup tables, duration bucketing.

#include <array>
#include <string>
#include <unordered_map>
#include <vector>

#include "apa/common.hpp"

namespace apa::phonetics {

enum class Trait {
    Other = 0,  // trash can: PAD / MASK / UNK
    Vowel,
    Stop,
    Affricate,
    Fricative,
    Aspirate,
    Liquid,
    Nasal,
    Semivowel,
};

enum class VcClass {
    Other = 0,  // trash can
    Vowel,
    Consonant,
};

inline constexpr int kTraitCount = 9;
inline constexpr int kVcCount = 3;

inline constexpr int kPadId = 0;
inline constexpr int kMaskId = 1;
inline constexpr int kUnkId = 2;
inline constexpr int kVocabSize = 42;  // 39 phones + PAD + MASK + UNK

inline constexpr const char* kPadSymbol = "<pad>";
inline constexpr const char* kMaskSymbol = "<mask>";
inline constexpr const char* kUnkSymbol = "<unk>";

const char* trait_name(Trait t);
Trait trait_from_name(const std::string& name);

// Fixed symbol<->index bijection over the 42-entry vocabulary. Special token
// indices are pinned (PAD 0, MASK 1, UNK 2) so checkpoints stay stable.
class PhoneVocab {
public:
    PhoneVocab();

    int phone_to_id(const std::string& symbol) const;  // unknown -> UNK
    const std::string& id_to_phone(int id) const;      // out of range -> throws
    bool contains(const std::string& symbol) const;
    int size() const { return kVocabSize; }
    const std::vector<std::string>& symbols() const { return symbols_; }

private:
    std::vector<std::string> symbols_;
    std::unordered_map<std::string, int> index_;
};

// Phone -> articulation trait map with the derived vowel/consonant view.
class TraitTable {
public:
    // Built-in CMU classification.
    TraitTable();
    // Override from a TSV file with lines "SYMBOL<TAB>trait".
    static TraitTable from_tsv(const std::string& path);

    Trait trait_of(const std::string& symbol) const;  // unmapped -> Other
    VcClass vc_of(const std::string& symbol) const;

    const std::unordered_map<std::string, Trait>& entries() const { return map_; }

private:
    std::unordered_map<std::string, Trait> map_;
};

inline VcClass vc_of_trait(Trait t) {
    if (t == Trait::Vowel) return VcClass::Vowel;
    if (t == Trait::Other) return VcClass::Other;
    return VcClass::Consonant;
}

// Frame-count bucketing: identity on [1, 100], capped at 100 above.
int duration_class(int frame_count);

inline constexpr int kDurationClassCount = 100;  // classes 1..100; 0 is the masked sentinel
inline constexpr double kAlignerFrameSeconds = 0.01;

// Frame count of a span at the aligner's 10 ms rate, rounded to nearest.
int frames_of_span(double start_s, double end_s);

// Strip trailing stress digits: "AA1" -> "AA".
std::string strip_stress(const std::string& label);

const PhoneVocab& vocab();            // shared immutable instance
const TraitTable& default_traits();   // shared immutable instance

}  // namespace apa::phonetics
