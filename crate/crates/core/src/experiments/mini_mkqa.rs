//! Generator for the mini-MKQA desk benchmark.
//!
//! 120 questions: 20 each in de, es, zh (high-resource) and ko, fi, th
//! (low-resource), over a corpus in those languages plus English. Every
//! question asks for the person behind a fictional entity whose name is a
//! Latin-script anchor shared by all passages about it; the anchor stands
//! in for the cross-script alignment a multilingual embedder provides.
//!
//! Each question has one answer-placement type:
//!
//! | type   | answer-bearing passages                          | count |
//! |--------|--------------------------------------------------|-------|
//! | A      | SL and en                                        | 4     |
//! | B      | en only                                          | 4     |
//! | C      | another non-en language, answer in Latin script  | 3     |
//! | Cn     | another language, answer transliterated natively | 3     |
//! | D      | SL only                                          | 3     |
//! | E      | none                                             | 3     |
//!
//! Passages without the answer mention the entity with some other fact.
//! The dictionary holds correct English translations of every question and
//! of every `Cn` answer passage; all other passages fall through to the
//! tagged passthrough.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::evaluation::{normalize, Resource, DEFAULT_HIGH_RESOURCE};
use crate::lang::Lang;
use crate::providers::mock::DictionaryEntry;
use crate::queries::QueryItem;

pub const QUERY_LANGS: [&str; 6] = ["de", "es", "zh", "ko", "fi", "th"];
pub const PER_LANGUAGE: usize = 20;
const SEED: u64 = 20_240_917;
const SOURCE: &str = "mini-mkqa";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Placement {
    A,
    B,
    C,
    Cn,
    D,
    E,
}

impl Placement {
    fn for_index(i: usize) -> Placement {
        match i {
            0..=3 => Placement::A,
            4..=7 => Placement::B,
            8..=10 => Placement::C,
            11..=13 => Placement::Cn,
            14..=16 => Placement::D,
            _ => Placement::E,
        }
    }

    /// Strategies expected to answer correctly under the mock stack.
    pub fn expected_correct(&self) -> &'static [&'static str] {
        match self {
            Placement::A => &["MONO", "TRAG", "MULTI", "CROSS"],
            Placement::B => &["TRAG", "MULTI", "CROSS"],
            Placement::C => &["MULTI", "CROSS"],
            Placement::Cn => &["CROSS"],
            Placement::D => &["MONO", "MULTI", "CROSS"],
            Placement::E => &[],
        }
    }
}

// Latin syllable, Chinese, Korean, Thai.
const SYLLABLES: [(&str, &str, &str, &str); 16] = [
    ("ka", "卡", "카", "คา"),
    ("lo", "洛", "로", "โล"),
    ("ren", "伦", "렌", "เรน"),
    ("ta", "塔", "타", "ทา"),
    ("mi", "米", "미", "มี"),
    ("vo", "沃", "보", "โว"),
    ("sel", "塞尔", "셀", "เซล"),
    ("no", "诺", "노", "โน"),
    ("ri", "里", "리", "ริ"),
    ("bel", "贝尔", "벨", "เบล"),
    ("sa", "萨", "사", "ซา"),
    ("to", "托", "토", "โท"),
    ("fen", "芬", "펜", "เฟน"),
    ("ma", "马", "마", "มา"),
    ("da", "达", "다", "ดา"),
    ("ne", "内", "네", "เน"),
];

const ANCHOR_SYLLABLES: [&str; 18] =
    ["vel", "mor", "kes", "tri", "quin", "zar", "dor", "ith", "gal", "ven", "ur", "sil", "thar", "ox", "lun", "brak", "esk", "wy"];

#[derive(Debug, Clone)]
struct Name {
    syllables: Vec<Vec<usize>>,
}

impl Name {
    fn latin(&self) -> String {
        self.syllables
            .iter()
            .map(|part| {
                let s: String = part.iter().map(|&i| SYLLABLES[i].0).collect();
                let mut c = s.chars();
                c.next().map(|f| f.to_uppercase().chain(c).collect::<String>()).unwrap_or_default()
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn surname(&self) -> String {
        self.latin().rsplit(' ').next().unwrap_or_default().to_string()
    }

    fn native(&self, lang: &str) -> String {
        let pick = |i: usize| match lang {
            "zh" => SYLLABLES[i].1,
            "ko" => SYLLABLES[i].2,
            _ => SYLLABLES[i].3,
        };
        let sep = if lang == "zh" { "·" } else { " " };
        self.syllables.iter().map(|p| p.iter().map(|&i| pick(i)).collect::<String>()).collect::<Vec<_>>().join(sep)
    }
}

struct Relation {
    question: [&'static str; 7],
    answer: [&'static str; 7],
    other: [&'static str; 7],
}

// Column order: en, de, es, zh, ko, fi, th.
const COLUMNS: [&str; 7] = ["en", "de", "es", "zh", "ko", "fi", "th"];

const RELATIONS: [Relation; 5] = [
    Relation {
        question: [
            "Who designed the {X} Bridge?",
            "Wer hat die {X}-Brücke entworfen?",
            "¿Quién diseñó el puente {X}?",
            "{X}桥是谁设计的？",
            "{X} 다리는 누가 설계했나요?",
            "Kuka suunnitteli {X}-sillan?",
            "ใครเป็นผู้ออกแบบสะพาน {X}",
        ],
        answer: [
            "The {X} Bridge was designed by {A} and opened to traffic in {Y}.",
            "Die {X}-Brücke wurde von {A} entworfen und {Y} für den Verkehr freigegeben.",
            "El puente {X} fue diseñado por {A} y se abrió al tráfico en {Y}.",
            "{X}桥由{A}设计，于{Y}年通车。",
            "{X} 다리는 {A}의 설계로 {Y}년에 개통되었다.",
            "{X}-sillan suunnitteli {A}, ja se avattiin liikenteelle vuonna {Y}.",
            "สะพาน {X} ออกแบบโดย {A} และเปิดใช้งานในปี {Y}",
        ],
        other: [
            "The {X} Bridge crosses a narrow river valley and is about {N} metres long.",
            "Die {X}-Brücke überquert ein enges Flusstal und ist etwa {N} Meter lang.",
            "El puente {X} cruza un estrecho valle fluvial y mide unos {N} metros.",
            "{X}桥横跨一条狭窄的河谷，全长约{N}米。",
            "{X} 다리는 좁은 강 골짜기를 가로지르며 길이는 약 {N}미터이다.",
            "{X}-silta ylittää kapean jokilaakson, ja sen pituus on noin {N} metriä.",
            "สะพาน {X} ข้ามหุบเขาแม่น้ำแคบๆ และมีความยาวประมาณ {N} เมตร",
        ],
    },
    Relation {
        question: [
            "Who wrote the novel {X}?",
            "Wer schrieb den Roman {X}?",
            "¿Quién escribió la novela {X}?",
            "小说《{X}》的作者是谁？",
            "소설 {X}의 작가는 누구인가요?",
            "Kuka kirjoitti romaanin {X}?",
            "ใครเป็นผู้เขียนนวนิยายเรื่อง {X}",
        ],
        answer: [
            "{X} is a novel written by {A} and first published in {Y}.",
            "{X} ist ein Roman von {A}, der {Y} zum ersten Mal erschien.",
            "{X} es una novela escrita por {A} y publicada por primera vez en {Y}.",
            "《{X}》是{A}创作的小说，首次出版于{Y}年。",
            "{X}는 {A}가 쓴 소설로 {Y}년에 처음 출간되었다.",
            "{X} on romaani, jonka kirjoitti {A} ja joka julkaistiin vuonna {Y}.",
            "{X} เป็นนวนิยายที่เขียนโดย {A} และตีพิมพ์ครั้งแรกในปี {Y}",
        ],
        other: [
            "{X} is set in a small harbour town and follows three generations of one family.",
            "{X} spielt in einer kleinen Hafenstadt und begleitet drei Generationen einer Familie.",
            "{X} transcurre en un pequeño pueblo portuario y sigue a tres generaciones de una familia.",
            "《{X}》的故事发生在一个海港小镇，讲述了一个家族三代人的经历。",
            "{X}는 작은 항구 마을을 배경으로 한 가족의 세 세대를 그린다.",
            "{X} sijoittuu pieneen satamakaupunkiin ja seuraa yhden suvun kolmea sukupolvea.",
            "{X} มีฉากอยู่ในเมืองท่าเล็กๆ และเล่าเรื่องราวของครอบครัวหนึ่งสามรุ่น",
        ],
    },
    Relation {
        question: [
            "Who founded the town of {X}?",
            "Wer gründete die Stadt {X}?",
            "¿Quién fundó la ciudad de {X}?",
            "{X}镇是谁建立的？",
            "{X} 마을을 세운 사람은 누구인가요?",
            "Kuka perusti {X}n kaupungin?",
            "ใครเป็นผู้ก่อตั้งเมือง {X}",
        ],
        answer: [
            "The town of {X} was founded by {A} in {Y} as a trading post.",
            "Die Stadt {X} wurde {Y} von {A} als Handelsposten gegründet.",
            "La ciudad de {X} fue fundada por {A} en {Y} como puesto comercial.",
            "{X}镇由{A}于{Y}年建立，最初是一个贸易站。",
            "{X} 마을은 {Y}년에 {A}가 교역소로 세웠다.",
            "{X}n kaupungin perusti {A} vuonna {Y} kauppapaikaksi.",
            "เมือง {X} ก่อตั้งโดย {A} ในปี {Y} เพื่อเป็นสถานีการค้า",
        ],
        other: [
            "The town of {X} lies on a hill above the lake and has about {N} inhabitants.",
            "Die Stadt {X} liegt auf einem Hügel über dem See und hat etwa {N} Einwohner.",
            "La ciudad de {X} está situada en una colina sobre el lago y tiene unos {N} habitantes.",
            "{X}镇坐落在湖边的山丘上，人口约{N}人。",
            "{X} 마을은 호수 위 언덕에 자리 잡고 있으며 인구는 약 {N}명이다.",
            "{X}n kaupunki sijaitsee kukkulalla järven yläpuolella, ja siellä asuu noin {N} ihmistä.",
            "เมือง {X} ตั้งอยู่บนเนินเขาเหนือทะเลสาบ และมีประชากรประมาณ {N} คน",
        ],
    },
    Relation {
        question: [
            "Who discovered the comet {X}?",
            "Wer entdeckte den Kometen {X}?",
            "¿Quién descubrió el cometa {X}?",
            "{X}彗星是谁发现的？",
            "{X} 혜성을 발견한 사람은 누구인가요?",
            "Kuka löysi {X}-komeetan?",
            "ใครเป็นผู้ค้นพบดาวหาง {X}",
        ],
        answer: [
            "The comet {X} was discovered by {A} at a mountain observatory in {Y}.",
            "Der Komet {X} wurde {Y} von {A} an einer Bergsternwarte entdeckt.",
            "El cometa {X} fue descubierto por {A} en un observatorio de montaña en {Y}.",
            "{X}彗星由{A}于{Y}年在一座山地天文台发现。",
            "{X} 혜성은 {Y}년에 {A}가 산악 천문대에서 발견했다.",
            "{X}-komeetan löysi {A} vuoristo-observatoriossa vuonna {Y}.",
            "ดาวหาง {X} ถูกค้นพบโดย {A} ที่หอดูดาวบนภูเขาในปี {Y}",
        ],
        other: [
            "The comet {X} returns to the inner solar system roughly every {N} years.",
            "Der Komet {X} kehrt etwa alle {N} Jahre in das innere Sonnensystem zurück.",
            "El cometa {X} regresa al sistema solar interior aproximadamente cada {N} años.",
            "{X}彗星大约每{N}年回到内太阳系一次。",
            "{X} 혜성은 약 {N}년마다 태양계 안쪽으로 돌아온다.",
            "{X}-komeetta palaa sisemmälle aurinkokunnalle noin {N} vuoden välein.",
            "ดาวหาง {X} กลับเข้าสู่ระบบสุริยะชั้นในประมาณทุกๆ {N} ปี",
        ],
    },
    Relation {
        question: [
            "Who composed the {X} Symphony?",
            "Wer komponierte die {X}-Sinfonie?",
            "¿Quién compuso la sinfonía {X}?",
            "《{X}交响曲》是谁创作的？",
            "{X} 교향곡을 작곡한 사람은 누구인가요?",
            "Kuka sävelsi {X}-sinfonian?",
            "ใครเป็นผู้ประพันธ์ซิมโฟนี {X}",
        ],
        answer: [
            "The {X} Symphony was composed by {A} and premiered in {Y}.",
            "Die {X}-Sinfonie wurde von {A} komponiert und {Y} uraufgeführt.",
            "La sinfonía {X} fue compuesta por {A} y se estrenó en {Y}.",
            "《{X}交响曲》由{A}创作，于{Y}年首演。",
            "{X} 교향곡은 {A}가 작곡했으며 {Y}년에 초연되었다.",
            "{X}-sinfonian sävelsi {A}, ja se kantaesitettiin vuonna {Y}.",
            "ซิมโฟนี {X} ประพันธ์โดย {A} และแสดงครั้งแรกในปี {Y}",
        ],
        other: [
            "The {X} Symphony is written in four movements and lasts about {N} minutes.",
            "Die {X}-Sinfonie besteht aus vier Sätzen und dauert etwa {N} Minuten.",
            "La sinfonía {X} consta de cuatro movimientos y dura unos {N} minutos.",
            "《{X}交响曲》共有四个乐章，演奏时长约{N}分钟。",
            "{X} 교향곡은 네 개의 악장으로 이루어져 있으며 연주 시간은 약 {N}분이다.",
            "{X}-sinfoniassa on neljä osaa, ja se kestää noin {N} minuuttia.",
            "ซิมโฟนี {X} มีสี่ท่อน และมีความยาวประมาณ {N} นาที",
        ],
    },
];

fn column(lang: &str) -> usize {
    COLUMNS.iter().position(|c| *c == lang).expect("known column")
}

fn fill(template: &str, anchor: &str, answer: &str, year: u32, n: u32) -> String {
    template.replace("{X}", anchor).replace("{A}", answer).replace("{Y}", &year.to_string()).replace("{N}", &n.to_string())
}

/// Design row for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRow {
    pub query_id: String,
    pub lang: Lang,
    pub placement: Placement,
    pub anchor: String,
    pub answer: String,
    /// Buckets holding a passage with the gold string verbatim.
    pub gold_buckets: BTreeSet<Lang>,
    /// Bucket holding the answer only in native script (`Cn`).
    pub native_bucket: Option<Lang>,
}

#[derive(Debug, Clone)]
pub struct MiniMkqa {
    pub documents: Vec<Document>,
    pub queries: Vec<QueryItem>,
    pub dictionary: Vec<DictionaryEntry>,
    pub design: Vec<DesignRow>,
}

fn lang(code: &str) -> Lang {
    code.parse().expect("registered language")
}

fn unique_anchor(rng: &mut ChaCha8Rng, taken: &[String], names: &[(String, String)]) -> String {
    loop {
        let word = |rng: &mut ChaCha8Rng| {
            let n = rng.gen_range(2..=3);
            let s: String = (0..n).map(|_| *ANCHOR_SYLLABLES.choose(rng).unwrap()).collect();
            let mut c = s.chars();
            c.next().unwrap().to_uppercase().chain(c).collect::<String>()
        };
        let anchor = format!("{} {}", word(rng), word(rng));
        let low = anchor.to_lowercase();
        let clash = taken.iter().any(|t| t.contains(&low) || low.contains(t.as_str()))
            || names.iter().any(|(f, s)| f.contains(&low) || low.contains(s.as_str()));
        if low.len() >= 10 && !clash {
            return anchor;
        }
    }
}

/// Every template, lowercased, so names never occur inside ordinary words.
fn template_text() -> &'static str {
    static TEXT: std::sync::OnceLock<String> = std::sync::OnceLock::new();
    TEXT.get_or_init(|| {
        RELATIONS
            .iter()
            .flat_map(|r| r.question.iter().chain(&r.answer).chain(&r.other))
            .map(|t| t.to_lowercase())
            .collect::<Vec<_>>()
            .join("\n")
    })
}

/// `taken` holds (full name, surname) pairs, lowercased. A new name may
/// neither contain an earlier surname nor have its surname inside an
/// earlier name.
fn unique_name(rng: &mut ChaCha8Rng, taken: &[(String, String)], anchors: &[String]) -> Name {
    loop {
        let first: Vec<usize> = (0..2).map(|_| rng.gen_range(0..SYLLABLES.len())).collect();
        let last_len = rng.gen_range(2..=3);
        let last: Vec<usize> = (0..last_len).map(|_| rng.gen_range(0..SYLLABLES.len())).collect();
        let name = Name { syllables: vec![first, last] };
        let (full, sur) = (name.latin().to_lowercase(), name.surname().to_lowercase());
        let clash = taken.iter().any(|(f, s)| f.contains(&sur) || full.contains(s.as_str()))
            || anchors.iter().any(|a| a.contains(&sur) || full.contains(a.as_str()))
            || template_text().contains(&sur);
        if sur.len() >= 4 && !clash {
            return name;
        }
    }
}

pub fn generate() -> MiniMkqa {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut documents = Vec::new();
    let mut queries = Vec::new();
    let mut dictionary = Vec::new();
    let mut design = Vec::new();
    let mut anchors: Vec<String> = Vec::new();
    let mut names: Vec<(String, String)> = Vec::new();
    let native_scripts = ["zh", "ko", "th"];
    let latin_others = ["de", "es", "fi", "zh", "ko", "th"];

    for sl in QUERY_LANGS {
        for i in 0..PER_LANGUAGE {
            let qid = format!("{sl}-{:02}", i + 1);
            let placement = Placement::for_index(i);
            let rel = &RELATIONS[i % RELATIONS.len()];
            let anchor = unique_anchor(&mut rng, &anchors, &names);
            anchors.push(anchor.to_lowercase());
            let name = unique_name(&mut rng, &names, &anchors);
            names.push((name.latin().to_lowercase(), name.surname().to_lowercase()));
            let answer = name.latin();
            let year: u32 = rng.gen_range(1840..1990);
            let n: u32 = rng.gen_range(120..980);

            let mut doc_no = 0;
            let mut add = |documents: &mut Vec<Document>, l: &str, text: String| {
                doc_no += 1;
                let id = format!("{qid}-{l}-{doc_no}");
                documents.push(Document { id, lang: lang(l), title: anchor.clone(), text, source: SOURCE.into() });
                documents.last().unwrap().passage_text()
            };
            let answer_in = |l: &str| fill(rel.answer[column(l)], &anchor, &answer, year, n);
            let other_in = |l: &str| fill(rel.other[column(l)], &anchor, &answer, year, n);

            let mut gold_buckets = BTreeSet::new();
            let mut native_bucket = None;
            match placement {
                Placement::A => {
                    add(&mut documents, sl, answer_in(sl));
                    add(&mut documents, "en", answer_in("en"));
                    gold_buckets.extend([lang(sl), Lang::EN]);
                }
                Placement::B => {
                    add(&mut documents, sl, other_in(sl));
                    add(&mut documents, "en", answer_in("en"));
                    gold_buckets.insert(Lang::EN);
                }
                Placement::C => {
                    let choices: Vec<&str> = latin_others.iter().copied().filter(|l| *l != sl).collect();
                    let x = choices[rng.gen_range(0..choices.len())];
                    add(&mut documents, sl, other_in(sl));
                    add(&mut documents, "en", other_in("en"));
                    add(&mut documents, x, answer_in(x));
                    gold_buckets.insert(lang(x));
                }
                Placement::Cn => {
                    let choices: Vec<&str> = native_scripts.iter().copied().filter(|l| *l != sl).collect();
                    let x = choices[rng.gen_range(0..choices.len())];
                    add(&mut documents, sl, other_in(sl));
                    add(&mut documents, "en", other_in("en"));
                    let native = fill(rel.answer[column(x)], &anchor, &name.native(x), year, n);
                    let src_text = add(&mut documents, x, native);
                    dictionary.push(DictionaryEntry {
                        src_lang: lang(x),
                        tgt_lang: Lang::EN,
                        src_text,
                        tgt_text: format!("{anchor}\n{}", answer_in("en")),
                    });
                    native_bucket = Some(lang(x));
                }
                Placement::D => {
                    add(&mut documents, sl, answer_in(sl));
                    add(&mut documents, "en", other_in("en"));
                    gold_buckets.insert(lang(sl));
                }
                Placement::E => {
                    add(&mut documents, sl, other_in(sl));
                    add(&mut documents, "en", other_in("en"));
                }
            }

            let question = fill(rel.question[column(sl)], &anchor, &answer, year, n);
            dictionary.push(DictionaryEntry {
                src_lang: lang(sl),
                tgt_lang: Lang::EN,
                src_text: question.clone(),
                tgt_text: fill(rel.question[column("en")], &anchor, &answer, year, n),
            });
            let resource = if DEFAULT_HIGH_RESOURCE.contains(&sl) { Resource::HR } else { Resource::LR };
            queries.push(QueryItem {
                id: qid.clone(),
                lang: lang(sl),
                question,
                answers: vec![answer.clone(), name.surname()],
                resource: Some(resource),
            });
            design.push(DesignRow { query_id: qid, lang: lang(sl), placement, anchor: anchor.clone(), answer, gold_buckets, native_bucket });
        }
    }
    MiniMkqa { documents, queries, dictionary, design }
}

impl MiniMkqa {
    pub fn corpus_jsonl(&self) -> String {
        jsonl(&self.documents)
    }

    pub fn queries_jsonl(&self) -> String {
        jsonl(&self.queries)
    }

    pub fn dictionary_jsonl(&self) -> String {
        jsonl(&self.dictionary)
    }

    /// Expected EM percentage per strategy and language under the mock
    /// stack, read off the placement table.
    pub fn expected_accuracy(&self) -> BTreeMap<&'static str, BTreeMap<Lang, f64>> {
        let mut out: BTreeMap<&'static str, BTreeMap<Lang, f64>> = BTreeMap::new();
        for strategy in ["MONO", "TRAG", "MULTI", "CROSS"] {
            for l in QUERY_LANGS {
                let rows: Vec<&DesignRow> = self.design.iter().filter(|r| r.lang == lang(l)).collect();
                let hits = rows.iter().filter(|r| r.placement.expected_correct().contains(&strategy)).count();
                out.entry(strategy).or_default().insert(lang(l), 100.0 * hits as f64 / rows.len() as f64);
            }
        }
        out
    }

    pub fn design_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# mini-MKQA design\n");
        let _ = writeln!(
            out,
            "Generated by `cargo run --example gen_mini_mkqa`; do not edit by hand.\n\n\
             {} questions, {} per language in {}. Resource classes: de, es, zh HR; ko, fi, th LR.\n\
             Corpus: {} passages in {} plus en. Dictionary: {} entries.\n",
            self.queries.len(),
            PER_LANGUAGE,
            QUERY_LANGS.join(", "),
            self.documents.len(),
            QUERY_LANGS.join(", "),
            self.dictionary.len()
        );
        let _ = writeln!(out, "## Placement types\n");
        let _ = writeln!(out, "| type | answer-bearing passages | correct under mock stack |");
        let _ = writeln!(out, "|------|-------------------------|--------------------------|");
        for (p, desc) in [
            (Placement::A, "SL and en"),
            (Placement::B, "en only"),
            (Placement::C, "one other language, Latin-script answer"),
            (Placement::Cn, "one of zh/ko/th, answer transliterated (no gold string anywhere)"),
            (Placement::D, "SL only"),
            (Placement::E, "none"),
        ] {
            let _ = writeln!(out, "| {p:?} | {desc} | {} |", p.expected_correct().join(", "));
        }
        let _ = writeln!(out, "\nPer language: A 4, B 4, C 3, Cn 3, D 3, E 3.\n");
        let _ = writeln!(out, "## Expected flexible EM (%)\n");
        let expected = self.expected_accuracy();
        let _ = writeln!(out, "| strategy | {} | Avg |", QUERY_LANGS.join(" | "));
        let _ = writeln!(out, "|---|{}---|", "---|".repeat(QUERY_LANGS.len()));
        for (s, per) in &expected {
            let avg = per.values().sum::<f64>() / per.len() as f64;
            let cells: Vec<String> = per.values().map(|v| format!("{v:.1}")).collect();
            let _ = writeln!(out, "| {s} | {} | {avg:.1} |", cells.join(" | "));
        }
        let _ = writeln!(
            out,
            "\nMULTI minus MONO equals the share of questions whose gold string appears only outside the SL bucket (types B and C).\n"
        );
        let _ = writeln!(out, "## Questions\n");
        let _ = writeln!(out, "| id | type | anchor | answer | gold in buckets | native-script bucket |");
        let _ = writeln!(out, "|----|------|--------|--------|-----------------|----------------------|");
        for r in &self.design {
            let buckets: Vec<String> = r.gold_buckets.iter().map(|l| l.to_string()).collect();
            let _ = writeln!(
                out,
                "| {} | {:?} | {} | {} | {} | {} |",
                r.query_id,
                r.placement,
                r.anchor,
                r.answer,
                if buckets.is_empty() { "none".into() } else { buckets.join(", ") },
                r.native_bucket.map(|l| l.to_string()).unwrap_or_else(|| "-".into())
            );
        }
        out
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("corpus.jsonl"), self.corpus_jsonl())?;
        std::fs::write(dir.join("queries.jsonl"), self.queries_jsonl())?;
        std::fs::write(dir.join("dictionary.jsonl"), self.dictionary_jsonl())?;
        std::fs::write(dir.join("DESIGN.md"), self.design_markdown())
    }
}

fn jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("serializable"));
        out.push('\n');
    }
    out
}

/// Sanity checks on generated data: gold strings appear exactly in the
/// designed buckets.
pub fn verify(set: &MiniMkqa) -> Result<(), String> {
    let by_query: BTreeMap<&str, &QueryItem> = set.queries.iter().map(|q| (q.id.as_str(), q)).collect();
    for row in &set.design {
        let q = by_query[row.query_id.as_str()];
        let golds: Vec<String> = q.answers.iter().map(|a| normalize(a)).collect();
        let mut found = BTreeSet::new();
        for d in &set.documents {
            let text = normalize(&d.passage_text());
            if golds.iter().any(|g| text.contains(g.as_str())) {
                if !d.id.starts_with(&row.query_id) {
                    return Err(format!("gold {:?} of {} leaks into {}: {}", q.answers, row.query_id, d.id, d.passage_text()));
                }
                found.insert(d.lang);
            }
        }
        if found != row.gold_buckets {
            return Err(format!("{}: gold in {found:?}, designed {:?}", row.query_id, row.gold_buckets));
        }
    }
    Ok(())
}
