//! Per-element physical and economic constants plus the pairwise
//! mixing-enthalpy table.
//!
//! The element order of a [`Registry`] defines the component index used by
//! every composition vector in the crate, so it is preserved exactly across
//! load and save.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::RegistryError;

/// Avogadro constant, 1/mol.
pub const AVOGADRO: f64 = 6.022_140_76e23;

const DEFAULT_ELEMENTS: &str = include_str!("../data/elements.csv");
const DEFAULT_ENTHALPY: &str = include_str!("../data/enthalpy.csv");

/// Column names of `elements.csv`, in file order.
pub const ELEMENT_COLUMNS: [&str; 9] = [
    "symbol",
    "atomic_number",
    "valence_electrons",
    "atomic_radius_angstrom",
    "electronegativity",
    "molar_mass_kg_per_mol",
    "density_kg_per_m3",
    "atoms_per_unit_cell",
    "cost_usd_per_kg",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementRecord {
    pub symbol: String,
    pub atomic_number: u32,
    pub valence_electrons: u32,
    /// Å
    pub atomic_radius: f64,
    /// Pauling scale
    pub electronegativity: f64,
    /// kg/mol
    pub molar_mass: f64,
    /// kg/m³
    pub density: f64,
    pub atoms_per_unit_cell: u32,
    /// $/kg
    pub cost: f64,
}

impl ElementRecord {
    /// Cube root of the per-unit-cell volume, `(n M / (ρ N_A))^(1/3)`, in metres.
    pub fn cell_length(&self) -> f64 {
        (self.atoms_per_unit_cell as f64 * self.molar_mass / (self.density * AVOGADRO)).cbrt()
    }

    fn validate(&self, row: usize) -> Result<(), RegistryError> {
        let checks: [(&str, f64); 8] = [
            ("atomic_number", self.atomic_number as f64),
            ("valence_electrons", self.valence_electrons as f64),
            ("atomic_radius_angstrom", self.atomic_radius),
            ("electronegativity", self.electronegativity),
            ("molar_mass_kg_per_mol", self.molar_mass),
            ("density_kg_per_m3", self.density),
            ("atoms_per_unit_cell", self.atoms_per_unit_cell as f64),
            ("cost_usd_per_kg", self.cost),
        ];
        for (column, value) in checks {
            if !(value.is_finite() && value > 0.0) {
                return Err(RegistryError::NonPositive {
                    row,
                    column: column.to_string(),
                    value,
                });
            }
        }
        Ok(())
    }
}

/// Symmetric, zero-diagonal table of binary mixing enthalpies in kJ/mol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingEnthalpyTable {
    size: usize,
    values: Vec<f64>,
}

impl MixingEnthalpyTable {
    /// Builds a table from a dense row-major matrix, checking shape, diagonal
    /// and symmetry (exact equality).
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, RegistryError> {
        let size = rows.len();
        let mut values = Vec::with_capacity(size * size);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != size {
                return Err(RegistryError::EnthalpyShape {
                    expected: size,
                    found: format!("row {} has {} values", i, row.len()),
                });
            }
            values.extend_from_slice(row);
        }
        let table = MixingEnthalpyTable { size, values };
        for i in 0..size {
            if table.get(i, i) != 0.0 {
                return Err(RegistryError::DiagonalNonZero {
                    index: i,
                    value: table.get(i, i),
                });
            }
            for j in (i + 1)..size {
                if table.get(i, j) != table.get(j, i) || !table.get(i, j).is_finite() {
                    return Err(RegistryError::Asymmetric {
                        i,
                        j,
                        upper: table.get(i, j),
                        lower: table.get(j, i),
                    });
                }
            }
        }
        Ok(table)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.size..(i + 1) * self.size]
    }
}

/// Which element count goes in the numerator of the electron-concentration
/// feature.
///
/// The source formula labels the numerator "atomic number" and the
/// denominator "valence electron" while naming the feature a valence electron
/// concentration, so both readings are available.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VecConvention {
    /// valence electrons / atomic number
    #[default]
    ValenceOverAtomicNumber,
    /// atomic number / valence electrons
    AtomicNumberOverValence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registry {
    elements: Vec<ElementRecord>,
    enthalpy: MixingEnthalpyTable,
    avogadro: f64,
    vec_convention: VecConvention,
}

impl Registry {
    pub fn new(elements: Vec<ElementRecord>, enthalpy: MixingEnthalpyTable) -> Result<Self, RegistryError> {
        if elements.is_empty() {
            return Err(RegistryError::Empty);
        }
        let mut seen = HashSet::new();
        for (row, e) in elements.iter().enumerate() {
            e.validate(row + 1)?;
            if !seen.insert(e.symbol.clone()) {
                return Err(RegistryError::DuplicateSymbol(e.symbol.clone()));
            }
        }
        if enthalpy.size() != elements.len() {
            return Err(RegistryError::EnthalpyShape {
                expected: elements.len(),
                found: format!("{}x{} table", enthalpy.size(), enthalpy.size()),
            });
        }
        Ok(Registry {
            elements,
            enthalpy,
            avogadro: AVOGADRO,
            vec_convention: VecConvention::default(),
        })
    }

    /// The bundled 39-element registry.
    pub fn default_39() -> Self {
        Self::from_readers(DEFAULT_ELEMENTS.as_bytes(), DEFAULT_ENTHALPY.as_bytes())
            .expect("bundled registry data is valid")
    }

    pub fn from_readers<R1: Read, R2: Read>(elements: R1, enthalpy: R2) -> Result<Self, RegistryError> {
        let elements = read_elements(elements)?;
        let mut seen = HashSet::new();
        if let Some(dup) = elements.iter().find(|e| !seen.insert(e.symbol.as_str())) {
            return Err(RegistryError::DuplicateSymbol(dup.symbol.clone()));
        }
        let symbols: Vec<&str> = elements.iter().map(|e| e.symbol.as_str()).collect();
        let table = read_enthalpy(enthalpy, &symbols)?;
        Registry::new(elements, table)
    }

    pub fn with_vec_convention(mut self, convention: VecConvention) -> Self {
        self.vec_convention = convention;
        self
    }

    pub fn vec_convention(&self) -> VecConvention {
        self.vec_convention
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn elements(&self) -> &[ElementRecord] {
        &self.elements
    }

    pub fn element(&self, i: usize) -> &ElementRecord {
        &self.elements[i]
    }

    pub fn enthalpy(&self) -> &MixingEnthalpyTable {
        &self.enthalpy
    }

    pub fn avogadro(&self) -> f64 {
        self.avogadro
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.elements.iter().position(|e| e.symbol == symbol)
    }

    pub fn symbols(&self) -> impl Iterator<Item = &str> {
        self.elements.iter().map(|e| e.symbol.as_str())
    }

    /// Symmetric lookup of H_mix between elements `i` and `j` (zero-based).
    pub fn pair_enthalpy(&self, i: usize, j: usize) -> Result<f64, RegistryError> {
        let n = self.len();
        if i >= n || j >= n {
            return Err(RegistryError::IndexOutOfRange {
                index: i.max(j),
                len: n,
            });
        }
        Ok(self.enthalpy.get(i, j))
    }

    /// Registry restricted to the given element indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self, RegistryError> {
        let mut elements = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(RegistryError::IndexOutOfRange {
                    index: i,
                    len: self.len(),
                });
            }
            elements.push(self.elements[i].clone());
        }
        let rows = indices
            .iter()
            .map(|&i| indices.iter().map(|&j| self.enthalpy.get(i, j)).collect())
            .collect();
        let table = MixingEnthalpyTable::from_rows(rows)?;
        Ok(Registry::new(elements, table)?.with_vec_convention(self.vec_convention))
    }

    pub fn subset_by_symbols(&self, symbols: &[&str]) -> Result<Self, RegistryError> {
        let indices = symbols
            .iter()
            .map(|s| {
                self.index_of(s)
                    .ok_or_else(|| RegistryError::UnknownSymbol(s.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.subset(&indices)
    }

    pub fn load(elements_path: &Path, enthalpy_path: &Path) -> Result<Self, RegistryError> {
        let open = |p: &Path| {
            std::fs::File::open(p).map_err(|e| RegistryError::Io {
                path: p.display().to_string(),
                source: e,
            })
        };
        Self::from_readers(open(elements_path)?, open(enthalpy_path)?)
    }

    pub fn write_elements<W: Write>(&self, w: W) -> Result<(), RegistryError> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(ELEMENT_COLUMNS)?;
        for e in &self.elements {
            wtr.write_record([
                e.symbol.clone(),
                e.atomic_number.to_string(),
                e.valence_electrons.to_string(),
                e.atomic_radius.to_string(),
                e.electronegativity.to_string(),
                e.molar_mass.to_string(),
                e.density.to_string(),
                e.atoms_per_unit_cell.to_string(),
                e.cost.to_string(),
            ])?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn write_enthalpy<W: Write>(&self, w: W) -> Result<(), RegistryError> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["symbol".to_string()];
        header.extend(self.symbols().map(str::to_string));
        wtr.write_record(&header)?;
        for (i, e) in self.elements.iter().enumerate() {
            let mut row = vec![e.symbol.clone()];
            row.extend(self.enthalpy.row(i).iter().map(|v| v.to_string()));
            wtr.write_record(&row)?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn save(&self, elements_path: &Path, enthalpy_path: &Path) -> Result<(), RegistryError> {
        let create = |p: &Path| {
            std::fs::File::create(p).map_err(|e| RegistryError::Io {
                path: p.display().to_string(),
                source: e,
            })
        };
        self.write_elements(create(elements_path)?)?;
        self.write_enthalpy(create(enthalpy_path)?)
    }
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(r)
}

fn parse_field<T: std::str::FromStr>(
    record: &csv::StringRecord,
    idx: usize,
    column: &str,
    row: usize,
) -> Result<T, RegistryError> {
    let raw = record.get(idx).unwrap_or("");
    raw.parse().map_err(|_| RegistryError::Parse {
        row,
        column: column.to_string(),
        value: raw.to_string(),
    })
}

fn read_elements<R: Read>(r: R) -> Result<Vec<ElementRecord>, RegistryError> {
    let mut rdr = csv_reader(r);
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; 9];
    for (k, col) in ELEMENT_COLUMNS.iter().enumerate() {
        idx[k] = headers
            .iter()
            .position(|h| h == *col)
            .ok_or_else(|| RegistryError::MissingColumn(col.to_string()))?;
    }
    let mut out = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row = r + 1;
        out.push(ElementRecord {
            symbol: record.get(idx[0]).unwrap_or("").to_string(),
            atomic_number: parse_field(&record, idx[1], ELEMENT_COLUMNS[1], row)?,
            valence_electrons: parse_field(&record, idx[2], ELEMENT_COLUMNS[2], row)?,
            atomic_radius: parse_field(&record, idx[3], ELEMENT_COLUMNS[3], row)?,
            electronegativity: parse_field(&record, idx[4], ELEMENT_COLUMNS[4], row)?,
            molar_mass: parse_field(&record, idx[5], ELEMENT_COLUMNS[5], row)?,
            density: parse_field(&record, idx[6], ELEMENT_COLUMNS[6], row)?,
            atoms_per_unit_cell: parse_field(&record, idx[7], ELEMENT_COLUMNS[7], row)?,
            cost: parse_field(&record, idx[8], ELEMENT_COLUMNS[8], row)?,
        });
    }
    Ok(out)
}

/// Reads a symbol-labelled square table and reorders it to `symbols`.
fn read_enthalpy<R: Read>(r: R, symbols: &[&str]) -> Result<MixingEnthalpyTable, RegistryError> {
    let mut rdr = csv_reader(r);
    let headers = rdr.headers()?.clone();
    let cols: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    if cols.len() != symbols.len() {
        return Err(RegistryError::EnthalpyShape {
            expected: symbols.len(),
            found: format!("{} columns", cols.len()),
        });
    }
    let col_pos = |s: &str| cols.iter().position(|c| c == s);
    let mut rows_by_symbol: Vec<Option<Vec<f64>>> = vec![None; symbols.len()];
    let mut n_rows = 0;
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        n_rows += 1;
        let sym = record.get(0).unwrap_or("");
        let target = symbols
            .iter()
            .position(|s| *s == sym)
            .ok_or_else(|| RegistryError::UnknownSymbol(sym.to_string()))?;
        let mut vals = Vec::with_capacity(cols.len());
        for (k, col) in cols.iter().enumerate() {
            vals.push(parse_field::<f64>(&record, k + 1, col, r + 1)?);
        }
        rows_by_symbol[target] = Some(vals);
    }
    if n_rows != symbols.len() {
        return Err(RegistryError::EnthalpyShape {
            expected: symbols.len(),
            found: format!("{} rows", n_rows),
        });
    }
    let mut rows = Vec::with_capacity(symbols.len());
    for (i, sym) in symbols.iter().enumerate() {
        let file_row = rows_by_symbol[i]
            .as_ref()
            .ok_or_else(|| RegistryError::UnknownSymbol(sym.to_string()))?;
        let mut row = Vec::with_capacity(symbols.len());
        for other in symbols {
            let c = col_pos(other).ok_or_else(|| RegistryError::UnknownSymbol(other.to_string()))?;
            row.push(file_row[c]);
        }
        rows.push(row);
    }
    MixingEnthalpyTable::from_rows(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_ELEMENTS: &str = "\
symbol,atomic_number,valence_electrons,atomic_radius_angstrom,electronegativity,molar_mass_kg_per_mol,density_kg_per_m3,atoms_per_unit_cell,cost_usd_per_kg
Ni,28,10,1.246,1.91,0.058693,8908,4,18
Ti,22,4,1.462,1.54,0.047867,4506,2,11
";

    #[test]
    fn default_registry_has_39_elements() {
        let reg = Registry::default_39();
        assert_eq!(reg.len(), 39);
        assert_eq!(reg.element(0).symbol, "Ni");
    }

    #[test]
    fn binary_pair_is_symmetric() {
        let table = "symbol,Ni,Ti\nNi,0,-30\nTi,-30,0\n";
        let reg = Registry::from_readers(TWO_ELEMENTS.as_bytes(), table.as_bytes()).unwrap();
        assert_eq!(reg.pair_enthalpy(0, 1).unwrap(), -30.0);
        assert_eq!(reg.pair_enthalpy(1, 0).unwrap(), -30.0);
        assert_eq!(reg.pair_enthalpy(1, 1).unwrap(), 0.0);
    }

    #[test]
    fn enthalpy_columns_are_reordered_to_element_order() {
        let table = "symbol,Ti,Ni\nTi,0,-30\nNi,-30,0\n";
        let reg = Registry::from_readers(TWO_ELEMENTS.as_bytes(), table.as_bytes()).unwrap();
        assert_eq!(reg.pair_enthalpy(0, 1).unwrap(), -30.0);
    }

    #[test]
    fn nonzero_diagonal_is_rejected() {
        let mut rows = vec![vec![0.0; 4]; 4];
        rows[3][3] = 5.0;
        let err = MixingEnthalpyTable::from_rows(rows).unwrap_err();
        assert!(matches!(err, RegistryError::DiagonalNonZero { index: 3, .. }));
    }

    #[test]
    fn asymmetric_table_is_rejected() {
        let table = "symbol,Ni,Ti\nNi,0,-30\nTi,-31,0\n";
        let err = Registry::from_readers(TWO_ELEMENTS.as_bytes(), table.as_bytes()).unwrap_err();
        assert!(matches!(err, RegistryError::Asymmetric { .. }));
    }

    #[test]
    fn wrong_size_table_is_rejected() {
        let table = "symbol,Ni\nNi,0\n";
        let err = Registry::from_readers(TWO_ELEMENTS.as_bytes(), table.as_bytes()).unwrap_err();
        assert!(matches!(err, RegistryError::EnthalpyShape { .. }));
    }

    #[test]
    fn duplicate_symbol_is_rejected() {
        let elements = format!("{}Ni,28,10,1.246,1.91,0.058693,8908,4,18\n", TWO_ELEMENTS);
        let table = "symbol,Ni,Ti,Ni\nNi,0,-30,0\nTi,-30,0,-30\nNi,0,-30,0\n";
        let err = Registry::from_readers(elements.as_bytes(), table.as_bytes()).unwrap_err();
        assert!(matches!(err, RegistryError::DuplicateSymbol(ref s) if s == "Ni"));
    }

    #[test]
    fn non_positive_quantity_is_rejected() {
        let elements = TWO_ELEMENTS.replace("8908", "-1");
        let table = "symbol,Ni,Ti\nNi,0,-30\nTi,-30,0\n";
        let err = Registry::from_readers(elements.as_bytes(), table.as_bytes()).unwrap_err();
        assert!(matches!(err, RegistryError::NonPositive { ref column, .. } if column == "density_kg_per_m3"));
    }

    #[test]
    fn missing_column_is_rejected() {
        let elements = TWO_ELEMENTS.replace(",cost_usd_per_kg", ",price");
        let table = "symbol,Ni,Ti\nNi,0,-30\nTi,-30,0\n";
        let err = Registry::from_readers(elements.as_bytes(), table.as_bytes()).unwrap_err();
        assert!(matches!(err, RegistryError::MissingColumn(ref c) if c == "cost_usd_per_kg"));
    }

    #[test]
    fn out_of_range_lookup_fails() {
        let reg = Registry::default_39();
        assert!(matches!(
            reg.pair_enthalpy(0, 39),
            Err(RegistryError::IndexOutOfRange { index: 39, len: 39 })
        ));
    }

    #[test]
    fn full_matrix_symmetry_of_default_table() {
        let reg = Registry::default_39();
        for i in 0..reg.len() {
            assert_eq!(reg.pair_enthalpy(i, i).unwrap(), 0.0);
            for j in 0..reg.len() {
                assert_eq!(reg.pair_enthalpy(i, j).unwrap(), reg.pair_enthalpy(j, i).unwrap());
            }
        }
    }

    #[test]
    fn save_and_reload_is_exact() {
        let reg = Registry::default_39();
        let mut el = Vec::new();
        let mut en = Vec::new();
        reg.write_elements(&mut el).unwrap();
        reg.write_enthalpy(&mut en).unwrap();
        let back = Registry::from_readers(el.as_slice(), en.as_slice()).unwrap();
        assert_eq!(back, reg);
    }

    #[test]
    fn cell_length_is_angstrom_scale() {
        let reg = Registry::default_39();
        let ni = reg.element(0).cell_length();
        // fcc Ni: a = 3.52 Å
        assert!((ni - 3.524e-10).abs() < 0.01e-10, "{ni}");
    }
}
