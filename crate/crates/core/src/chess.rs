//! Minimal FEN reading: enough to validate chess payloads and to compute
//! the built-in board features. No move generation.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Color {
    White,
    Black,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PieceKind {
    Pawn,
    Knight,
    Bishop,
    Rook,
    Queen,
    King,
}

impl PieceKind {
    /// Conventional material value; the king carries none.
    pub fn material(self) -> i32 {
        match self {
            PieceKind::Pawn => 1,
            PieceKind::Knight | PieceKind::Bishop => 3,
            PieceKind::Rook => 5,
            PieceKind::Queen => 9,
            PieceKind::King => 0,
        }
    }

    fn from_letter(c: char) -> Option<(Color, PieceKind)> {
        let color = if c.is_ascii_uppercase() {
            Color::White
        } else {
            Color::Black
        };
        let kind = match c.to_ascii_lowercase() {
            'p' => PieceKind::Pawn,
            'n' => PieceKind::Knight,
            'b' => PieceKind::Bishop,
            'r' => PieceKind::Rook,
            'q' => PieceKind::Queen,
            'k' => PieceKind::King,
            _ => return None,
        };
        Some((color, kind))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FenError(pub String);

impl fmt::Display for FenError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid FEN: {}", self.0)
    }
}

impl std::error::Error for FenError {}

/// Piece placement plus side to move. Squares are indexed rank-major from a8.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Position {
    squares: [Option<(Color, PieceKind)>; 64],
    pub side_to_move: Color,
}

impl Position {
    /// Parses the placement and active-color fields; trailing fields
    /// (castling, en passant, clocks) are accepted but not interpreted.
    pub fn from_fen(fen: &str) -> Result<Self, FenError> {
        let mut fields = fen.split_whitespace();
        let placement = fields
            .next()
            .ok_or_else(|| FenError("empty string".into()))?;
        let side = match fields.next() {
            Some("w") => Color::White,
            Some("b") => Color::Black,
            Some(other) => return Err(FenError(format!("bad active color `{other}`"))),
            None => return Err(FenError("missing active color".into())),
        };
        if fields.count() > 4 {
            return Err(FenError("too many fields".into()));
        }

        let mut squares = [None; 64];
        let ranks: Vec<&str> = placement.split('/').collect();
        if ranks.len() != 8 {
            return Err(FenError(format!("expected 8 ranks, found {}", ranks.len())));
        }
        for (r, rank) in ranks.iter().enumerate() {
            let mut file = 0usize;
            for c in rank.chars() {
                if let Some(skip) = c.to_digit(10) {
                    if skip == 0 || skip > 8 {
                        return Err(FenError(format!("bad empty-square count `{c}`")));
                    }
                    file += skip as usize;
                } else {
                    let piece = PieceKind::from_letter(c)
                        .ok_or_else(|| FenError(format!("unknown piece `{c}`")))?;
                    if file >= 8 {
                        return Err(FenError(format!("rank {} overflows", 8 - r)));
                    }
                    squares[r * 8 + file] = Some(piece);
                    file += 1;
                }
            }
            if file != 8 {
                return Err(FenError(format!("rank {} has {} squares", 8 - r, file)));
            }
        }
        Ok(Position {
            squares,
            side_to_move: side,
        })
    }

    pub fn pieces(&self) -> impl Iterator<Item = (Color, PieceKind)> + '_ {
        self.squares.iter().flatten().copied()
    }

    /// White material minus black material.
    pub fn material_difference(&self) -> i32 {
        self.pieces()
            .map(|(color, kind)| match color {
                Color::White => kind.material(),
                Color::Black => -kind.material(),
            })
            .sum()
    }
}
