//! Seeded university-domain data in the fact line format.
//!
//! Each university has 5 departments with research groups, professors,
//! courses and students, about 1020 facts in all.

use std::io::{self, Write};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Rules over the generated data: five derivation rules and two queries.
pub const UNIVERSITY_RULES: &str = include_str!("../data/university.rules");

const DEPARTMENTS: usize = 5;
const GROUPS: usize = 2;
const PROFESSORS: usize = 4;
const COURSES: usize = 8;
const COURSES_PER_PROFESSOR: usize = COURSES / PROFESSORS;

struct Out<W> {
    w: W,
    n: usize,
}

impl<W: Write> Out<W> {
    fn fact(&mut self, ft: &str, id: &str, attr: &str, value: &str, vt: &str) -> io::Result<()> {
        self.n += 1;
        writeln!(self.w, "{ft}\t{id}\t{attr}\t{value}\t{vt}")
    }

    fn s(&mut self, ft: &str, id: &str, attr: &str, value: &str) -> io::Result<()> {
        self.fact(ft, id, attr, value, "string")
    }
}

/// Writes `scale` universities; returns the number of fact lines. The
/// output depends only on `scale` and `seed`.
pub fn generate(scale: usize, seed: u64, w: impl Write) -> io::Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Out { w, n: 0 };
    for u in 0..scale {
        let univ = format!("u{u}");
        out.s("Organization", &univ, "kind", "university")?;
        out.s("Organization", &univ, "name", &format!("University {u}"))?;
        for d in 0..DEPARTMENTS {
            let dept = format!("{univ}.d{d}");
            out.s("Organization", &dept, "kind", "department")?;
            out.s("Organization", &dept, "name", &format!("Department {d} of University {u}"))?;
            out.s("Organization", &dept, "subOrganizationOf", &univ)?;
            for g in 0..GROUPS {
                let group = format!("{dept}.g{g}");
                out.s("Organization", &group, "kind", "researchGroup")?;
                out.s("Organization", &group, "subOrganizationOf", &dept)?;
            }
            let courses: Vec<String> = (0..COURSES).map(|c| format!("{dept}.c{c}")).collect();
            for (c, course) in courses.iter().enumerate() {
                out.s("Course", course, "name", &format!("Course {c}"))?;
                out.s("Course", course, "offeredBy", &dept)?;
            }
            let profs: Vec<String> = (0..PROFESSORS).map(|p| format!("{dept}.p{p}")).collect();
            for (p, prof) in profs.iter().enumerate() {
                out.s("Professor", prof, "worksFor", &dept)?;
                out.s("Professor", prof, "name", &format!("Professor {p}"))?;
                out.fact("Professor", prof, "age", &rng.random_range(30u32..=70).to_string(), "uint32")?;
                for course in &courses[p * COURSES_PER_PROFESSOR..(p + 1) * COURSES_PER_PROFESSOR] {
                    out.s("Professor", prof, "teaches", course)?;
                }
            }
            for s in 0..rng.random_range(20..=25) {
                let student = format!("{dept}.s{s}");
                out.s("Student", &student, "memberOf", &dept)?;
                out.s("Student", &student, "name", &format!("Student {s}"))?;
                out.fact("Student", &student, "age", &rng.random_range(18u32..=30).to_string(), "uint32")?;
                out.s("Student", &student, "advisor", profs.choose(&mut rng).expect("professors"))?;
                let k = rng.random_range(2..=4);
                for course in courses.choose_multiple(&mut rng, k) {
                    out.s("Student", &student, "takesCourse", course)?;
                }
            }
        }
    }
    out.w.flush()?;
    Ok(out.n)
}

pub fn generate_string(scale: usize, seed: u64) -> String {
    let mut buf = Vec::new();
    generate(scale, seed, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("ascii output")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::StringDictionary;
    use crate::syntax::{parse_facts, parse_rules};

    #[test]
    fn deterministic_and_sized() {
        assert_eq!(generate_string(3, 7), generate_string(3, 7));
        assert_ne!(generate_string(3, 7), generate_string(3, 8));
        assert_eq!(generate(0, 1, io::sink()).unwrap(), 0);
        let n = generate(10, 42, io::sink()).unwrap();
        assert!((9_000..=11_000).contains(&n), "{n}");
    }

    #[test]
    fn output_parses() {
        let d = StringDictionary::new();
        let text = generate_string(2, 5);
        let facts = parse_facts(&text, &d).unwrap();
        assert_eq!(facts.len(), text.lines().count());
        assert_eq!(parse_rules(UNIVERSITY_RULES, &d).unwrap().len(), 7);
    }
}
