//! Closed vocabularies for the indoor-scene language: rooms, objects,
//! modifiers and the small amount of world knowledge (typical furniture,
//! part-of, structural pairs) the prompt composer relies on.

/// Canonical room names with their surface forms (longest forms first
/// within each entry is not required; matching is longest-span overall).
pub(crate) const ROOMS: &[(&str, &[&str])] = &[
    ("home office", &["home office", "study room"]),
    ("office", &["office", "study"]),
    ("kitchen", &["kitchen", "kitchenette"]),
    ("bathroom", &["bathroom", "restroom", "washroom", "bath room"]),
    ("bedroom", &["bedroom", "bed room"]),
    ("basement", &["basement", "cellar"]),
    ("hallway", &["hallway", "hall", "corridor"]),
    ("living room", &["living room", "lounge", "family room"]),
    ("dining room", &["dining room"]),
    ("childs room", &["childs room", "child's room", "children's room", "kids room", "kid's room", "nursery"]),
    ("garage", &["garage"]),
    ("attic", &["attic"]),
    ("outside", &["outside", "outdoors", "yard", "garden"]),
    ("laundry room", &["laundry room", "laundry"]),
    ("closet", &["closet"]),
    ("lobby", &["lobby", "foyer", "entrance"]),
    ("library", &["library"]),
    ("playroom", &["playroom", "game room"]),
    ("pantry", &["pantry"]),
    ("gym", &["gym"]),
    ("studio", &["studio"]),
    ("porch", &["porch", "patio", "balcony"]),
];

/// Canonical object names with aliases. Plurals are derived.
pub(crate) const OBJECTS: &[(&str, &[&str])] = &[
    ("desk", &["desk"]),
    ("chair", &["chair"]),
    ("bed", &["bed"]),
    ("nightstand", &["nightstand", "night stand", "bedside table"]),
    ("lamp", &["lamp"]),
    ("drum set", &["drum set", "drum kit", "drumset", "drums"]),
    ("guitar", &["guitar"]),
    ("wall", &["wall"]),
    ("floor", &["floor"]),
    ("window", &["window"]),
    ("door", &["door"]),
    ("staircase", &["staircase", "stair case", "stairway", "stairs", "stair"]),
    ("rug", &["rug", "carpet", "mat"]),
    ("toilet", &["toilet"]),
    ("tub", &["tub", "bathtub", "bath tub"]),
    ("sink", &["sink"]),
    ("mirror", &["mirror"]),
    ("shower", &["shower"]),
    ("towel", &["towel"]),
    ("sofa", &["sofa", "couch"]),
    ("table", &["table"]),
    ("tv", &["tv", "television"]),
    ("fridge", &["fridge", "refrigerator"]),
    ("stove", &["stove", "oven", "cooker"]),
    ("counter", &["counter", "countertop"]),
    ("cabinet", &["cabinet", "cupboard"]),
    ("shelf", &["shelf", "shelves"]),
    ("bookshelf", &["bookshelf", "bookcase"]),
    ("painting", &["painting", "picture", "poster", "artwork"]),
    ("plant", &["plant"]),
    ("moon", &["moon"]),
    ("bedspread", &["bedspread", "blanket", "duvet"]),
    ("cushion", &["cushion"]),
    ("car", &["car"]),
    ("cat", &["cat"]),
    ("dog", &["dog"]),
    ("piano", &["piano"]),
    ("computer", &["computer", "laptop"]),
    ("sign", &["sign"]),
    ("tree", &["tree"]),
    ("bench", &["bench"]),
    ("fence", &["fence"]),
    ("toy", &["toy"]),
    ("clock", &["clock"]),
    ("curtain", &["curtain"]),
    ("pillow", &["pillow"]),
    ("dresser", &["dresser", "wardrobe"]),
    ("fireplace", &["fireplace"]),
    ("microwave", &["microwave"]),
    ("washing machine", &["washing machine", "washer"]),
    ("bike", &["bike", "bicycle"]),
    ("box", &["box"]),
    ("crib", &["crib"]),
    ("stool", &["stool"]),
    ("vase", &["vase"]),
    ("ceiling", &["ceiling"]),
    ("chandelier", &["chandelier"]),
    ("flower", &["flower"]),
    ("statue", &["statue"]),
    ("fan", &["fan"]),
    ("book", &["book"]),
    ("tile", &["tile"]),
    ("printer", &["printer"]),
];

/// Objects a room implies when nothing else is said about it.
pub(crate) const ROOM_ASSUMPTIONS: &[(&str, &[&str])] = &[
    ("bedroom", &["bed", "nightstand", "lamp"]),
    ("home office", &["desk"]),
    ("office", &["desk", "chair"]),
    ("kitchen", &["stove", "counter"]),
    ("bathroom", &["toilet", "sink", "tub"]),
    ("basement", &["staircase"]),
    ("living room", &["sofa", "tv"]),
    ("dining room", &["table", "chair"]),
    ("childs room", &["bed", "toy"]),
    ("hallway", &["door"]),
    ("garage", &["car"]),
    ("outside", &["tree"]),
    ("laundry room", &["washing machine"]),
    ("library", &["bookshelf"]),
];

/// Parts that describe a larger object rather than standing alone.
pub(crate) const PART_OF: &[(&str, &str)] = &[("bedspread", "bed"), ("cushion", "sofa")];

/// Background elements that need their logical pair.
pub(crate) const STRUCTURAL_PAIRS: &[(&str, &str)] = &[("wall", "floor"), ("ceiling", "floor")];

pub(crate) const COLORS: &[(&str, &str)] = &[
    ("red", "red"),
    ("blue", "blue"),
    ("green", "green"),
    ("yellow", "yellow"),
    ("white", "white"),
    ("black", "black"),
    ("grey", "grey"),
    ("gray", "grey"),
    ("brown", "brown"),
    ("pink", "pink"),
    ("purple", "purple"),
    ("orange", "orange"),
    ("beige", "beige"),
    ("gold", "gold"),
    ("silver", "silver"),
    ("cream", "cream"),
    ("teal", "teal"),
    ("turquoise", "turquoise"),
    ("maroon", "maroon"),
    ("navy", "navy"),
];

/// Non-colour modifiers (material, pattern, size).
pub(crate) const MODIFIERS: &[(&str, &str)] = &[
    ("wooden", "wooden"),
    ("wood", "wooden"),
    ("metal", "metal"),
    ("metallic", "metal"),
    ("glass", "glass"),
    ("leather", "leather"),
    ("marble", "marble"),
    ("stone", "stone"),
    ("brick", "brick"),
    ("plastic", "plastic"),
    ("striped", "striped"),
    ("stripped", "striped"),
    ("stripy", "striped"),
    ("checkered", "checkered"),
    ("floral", "floral"),
    ("plaid", "plaid"),
    ("spotted", "spotted"),
    ("big", "big"),
    ("large", "large"),
    ("small", "small"),
    ("tiny", "tiny"),
    ("huge", "huge"),
    ("tall", "tall"),
    ("long", "long"),
    ("round", "round"),
    ("square", "square"),
    ("old", "old"),
    ("modern", "modern"),
    ("fancy", "fancy"),
    ("bigger", "bigger"),
    ("smaller", "smaller"),
];

pub(crate) const NUMBER_WORDS: &[(&str, u32)] = &[
    ("two", 2),
    ("three", 3),
    ("four", 4),
    ("five", 5),
    ("six", 6),
    ("seven", 7),
    ("eight", 8),
    ("nine", 9),
    ("ten", 10),
];

pub(crate) const PREPOSITIONS: &[&str] = &[
    "on", "at", "near", "beside", "by", "behind", "under", "above", "against", "next", "along", "over", "below", "in",
    "inside", "across", "opposite", "between",
];

/// Prepositions that fix a position only relative to something else.
pub(crate) const RELATIVE_PREPOSITIONS: &[&str] = &["near", "beside", "by", "next", "between", "opposite"];

pub(crate) const HEDGES: &[&str] = &["maybe", "probably", "perhaps", "possibly", "might", "likely", "guess", "think"];

pub(crate) const CORRECTIONS: &[&str] = &["actually", "correction", "mean"];

pub(crate) const DIRECTIONS: &[&str] = &["north", "south", "east", "west"];

pub(crate) const ARTICLES: &[&str] = &["a", "an", "the", "some", "one"];

pub fn is_color(word: &str) -> bool {
    canonical_color(word).is_some()
}

pub fn canonical_color(word: &str) -> Option<&'static str> {
    COLORS.iter().find(|(w, _)| *w == word).map(|(_, c)| *c)
}

pub fn canonical_modifier(word: &str) -> Option<&'static str> {
    canonical_color(word).or_else(|| MODIFIERS.iter().find(|(w, _)| *w == word).map(|(_, c)| *c))
}

pub fn number_value(word: &str) -> Option<u32> {
    if !word.is_empty() && word.len() <= 3 && word.bytes().all(|b| b.is_ascii_digit()) {
        return word.parse().ok().filter(|&n| n >= 2);
    }
    NUMBER_WORDS.iter().find(|(w, _)| *w == word).map(|(_, n)| *n)
}

pub fn number_word(n: u32) -> String {
    NUMBER_WORDS.iter().find(|(_, v)| *v == n).map(|(w, _)| (*w).to_string()).unwrap_or_else(|| n.to_string())
}

pub fn assumptions_for(room: &str) -> &'static [&'static str] {
    ROOM_ASSUMPTIONS.iter().find(|(r, _)| *r == room).map(|(_, objs)| *objs).unwrap_or(&[])
}

pub fn whole_of(part: &str) -> Option<&'static str> {
    PART_OF.iter().find(|(p, _)| *p == part).map(|(_, w)| *w)
}

pub fn structural_pair(name: &str) -> Option<&'static str> {
    STRUCTURAL_PAIRS.iter().find(|(a, _)| *a == name).map(|(_, b)| *b)
}

pub fn is_room(name: &str) -> bool {
    ROOMS.iter().any(|(r, _)| *r == name)
}

pub fn is_object(name: &str) -> bool {
    OBJECTS.iter().any(|(o, _)| *o == name)
}

fn singular_candidates(word: &str) -> impl Iterator<Item = String> + '_ {
    let mut out = vec![word.to_string()];
    if let Some(stem) = word.strip_suffix("es") {
        out.push(stem.to_string());
    }
    if let Some(stem) = word.strip_suffix('s') {
        out.push(stem.to_string());
    }
    out.into_iter()
}

/// Longest match of a vocabulary entry starting at `tokens[0]`.
/// Returns `(canonical, tokens consumed, plural)`.
fn match_table(
    table: &'static [(&'static str, &'static [&'static str])],
    tokens: &[&str],
) -> Option<(&'static str, usize, bool)> {
    for len in (1..=3.min(tokens.len())).rev() {
        let head = tokens[..len - 1].join(" ");
        let last = tokens[len - 1];
        for (plural, cand_last) in singular_candidates(last).enumerate() {
            let phrase = if head.is_empty() { cand_last.clone() } else { format!("{head} {cand_last}") };
            for (canonical, forms) in table {
                if forms.contains(&phrase.as_str()) {
                    // "stairs"/"drums"/"shelves" are listed verbatim; treat them as plural only when stripped.
                    return Some((canonical, len, plural > 0));
                }
            }
        }
    }
    None
}

pub(crate) fn match_room(tokens: &[&str]) -> Option<(&'static str, usize)> {
    match_table(ROOMS, tokens).map(|(c, n, _)| (c, n))
}

pub(crate) fn match_object(tokens: &[&str]) -> Option<(&'static str, usize, bool)> {
    match_table(OBJECTS, tokens)
}

/// Canonical object for a single free-standing name, e.g. `guitars` → `guitar`.
pub fn canonical_object(name: &str) -> Option<&'static str> {
    let toks: Vec<&str> = name.split_whitespace().collect();
    match match_object(&toks) {
        Some((c, n, _)) if n == toks.len() => Some(c),
        _ => None,
    }
}

pub fn canonical_room(name: &str) -> Option<&'static str> {
    let toks: Vec<&str> = name.split_whitespace().collect();
    if toks.is_empty() {
        return None;
    }
    (0..toks.len()).find_map(|i| match_room(&toks[i..]).map(|(c, _)| c))
}

pub fn article(word: &str) -> &'static str {
    match word.chars().next() {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

pub fn plural(name: &str) -> String {
    if name.ends_with('s') || name.ends_with('x') || name.ends_with("ch") || name.ends_with("sh") {
        format!("{name}es")
    } else {
        format!("{name}s")
    }
}
